#include "bforge/io.hpp"

#include "bforge/error.hpp"

#include <png.h>

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

namespace bforge::io {

namespace {

constexpr char kMagic[8] = {'B', 'F', 'C', 'K', 'P', 'T', '0', '1'};

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open(const fs::path& p, const char* mode) {
  File f(std::fopen(p.c_str(), mode));
  if (!f) throw InvalidInput("cannot open " + p.string());
  return f;
}

nlohmann::json box_json(const Box& b) { return {b.x1, b.y1, b.x2, b.y2}; }

Box json_box(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw InvalidInput("box must be an array of four numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw InvalidInput("cannot open " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(p.string() + ": " + e.what());
  }
}

std::string image_name(std::size_t i) {
  std::ostringstream os;
  os << "images/" << std::setw(4) << std::setfill('0') << i << ".png";
  return os.str();
}

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

}  // namespace

void write_png(const fs::path& path, const Image& img) {
  if (img.rows() != kChannels || img.cols() != static_cast<Index>(kImageSize) * kImageSize)
    throw InvalidInput("write_png expects a 3 x 4096 image");
  File f = open(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw InvalidInput("libpng initialisation failed");
  }
  std::vector<png_byte> row(static_cast<std::size_t>(kImageSize) * 3);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw InvalidInput("failed writing " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, kImageSize, kImageSize, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < kImageSize; ++y) {
    for (int x = 0; x < kImageSize; ++x)
      for (int c = 0; c < kChannels; ++c) {
        const float v = std::clamp(img(c, pixel_index(x, y)), 0.0f, 1.0f);
        row[static_cast<std::size_t>(x * 3 + c)] = static_cast<png_byte>(std::lround(v * 255.0f));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const fs::path& path) {
  File f = open(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw InvalidInput("libpng initialisation failed");
  }
  Image img(kChannels, static_cast<Index>(kImageSize) * kImageSize);
  std::vector<png_byte> row;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw InvalidInput("failed reading " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  const auto w = png_get_image_width(png, info);
  const auto h = png_get_image_height(png, info);
  if (w != static_cast<png_uint_32>(kImageSize) || h != static_cast<png_uint_32>(kImageSize)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw InvalidInput(path.string() + ": expected a 64 x 64 image");
  }
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  row.resize(png_get_rowbytes(png, info));
  for (int y = 0; y < kImageSize; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < kImageSize; ++x)
      for (int c = 0; c < kChannels; ++c)
        img(c, pixel_index(x, y)) = static_cast<float>(row[static_cast<std::size_t>(x * 3 + c)]) / 255.0f;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void save_dataset(const fs::path& dir, const Dataset& data, const nlohmann::json& manifest) {
  fs::create_directories(dir / "images");
  nlohmann::json ann = nlohmann::json::array();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Sample& s = data[i];
    const std::string name = image_name(i);
    write_png(dir / name, s.image);
    nlohmann::json objects = nlohmann::json::array();
    for (std::size_t k = 0; k < s.gt.size(); ++k)
      objects.push_back({{"box", box_json(s.gt.boxes[k])}, {"label", s.gt.labels[k]}});
    nlohmann::json fb = nlohmann::json::array();
    for (const auto& b : s.forced_background) fb.push_back(box_json(b));
    ann.push_back({{"image", name},
                   {"objects", objects},
                   {"poisoned", s.poisoned},
                   {"relabeled_object", s.relabeled_object},
                   {"forced_background", fb}});
  }
  write_text(dir / "annotations.json", ann.dump(1) + "\n");
  nlohmann::json m = manifest;
  m["images"] = data.size();
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw InvalidInput("dataset directory " + dir.string() + " does not exist");
  const auto ann = read_json(dir / "annotations.json");
  if (!ann.is_array()) throw InvalidInput("annotations.json must hold an array");
  Dataset out;
  out.reserve(ann.size());
  try {
    for (const auto& a : ann) {
      Sample s;
      s.image = read_png(dir / a.at("image").get<std::string>());
      for (const auto& o : a.at("objects")) {
        s.gt.boxes.push_back(json_box(o.at("box")));
        s.gt.labels.push_back(o.at("label").get<int>());
      }
      s.poisoned = a.value("poisoned", false);
      s.relabeled_object = a.value("relabeled_object", -1);
      for (const auto& b : a.value("forced_background", nlohmann::json::array())) s.forced_background.push_back(json_box(b));
      out.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput((dir / "annotations.json").string() + ": " + e.what());
  }
  return out;
}

nlohmann::json load_manifest(const fs::path& dir) { return read_json(dir / "manifest.json"); }

void save_checkpoint(const fs::path& path, const DetectorParams<float>& params, const nlohmann::json& meta) {
  const auto& a = params.arch;
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : params.layers)
    layers.push_back({{"rows", l.weight.rows()}, {"cols", l.weight.cols()}, {"bias", l.bias.size()}});
  nlohmann::json header{{"version", DetectorArch::kVersion},
                        {"num_classes", a.num_classes},
                        {"grid", kGrid},
                        {"tau", a.tau},
                        {"channels", a.channels},
                        {"kernel", a.kernel},
                        {"prior_size", a.prior_size},
                        {"backbone_layers", a.backbone_layers},
                        {"layers", layers},
                        {"meta", meta.is_null() ? nlohmann::json::object() : meta}};
  const std::string h = header.dump();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t n = h.size();
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& l : params.layers) {
    out.write(reinterpret_cast<const char*>(l.weight.data()), static_cast<std::streamsize>(l.weight.size() * sizeof(float)));
    out.write(reinterpret_cast<const char*>(l.bias.data()), static_cast<std::streamsize>(l.bias.size() * sizeof(float)));
  }
  if (!out) throw InvalidInput("failed writing " + path.string());
}

DetectorParams<float> load_checkpoint(const fs::path& path, nlohmann::json* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  std::uint64_t n = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw InvalidInput(path.string() + " is not a checkpoint");
  if (n > (1u << 20)) throw InvalidInput(path.string() + ": header too large");
  std::string h(n, '\0');
  in.read(h.data(), static_cast<std::streamsize>(n));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(h);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(path.string() + ": bad header: " + e.what());
  }
  if (header.value("version", -1) != DetectorArch::kVersion)
    throw InvalidInput(path.string() + ": unsupported architecture version");
  DetectorArch arch;
  arch.num_classes = header.at("num_classes").get<int>();
  arch.tau = header.at("tau").get<double>();
  arch.channels = header.at("channels").get<std::array<int, 3>>();
  arch.kernel = header.at("kernel").get<int>();
  arch.prior_size = header.at("prior_size").get<double>();
  arch.backbone_layers = header.at("backbone_layers").get<int>();
  if (header.at("grid").get<int>() != kGrid) throw InvalidInput(path.string() + ": grid size mismatch");
  auto params = make_detector_shape<float>(arch);
  const auto& layers = header.at("layers");
  if (layers.size() != params.layers.size()) throw InvalidInput(path.string() + ": layer count mismatch");
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto& l = params.layers[i];
    if (layers[i].at("rows").get<Index>() != l.weight.rows() || layers[i].at("cols").get<Index>() != l.weight.cols() ||
        layers[i].at("bias").get<Index>() != l.bias.size())
      throw InvalidInput(path.string() + ": layer shape mismatch");
    in.read(reinterpret_cast<char*>(l.weight.data()), static_cast<std::streamsize>(l.weight.size() * sizeof(float)));
    in.read(reinterpret_cast<char*>(l.bias.data()), static_cast<std::streamsize>(l.bias.size() * sizeof(float)));
  }
  if (!in) throw InvalidInput(path.string() + ": truncated parameter data");
  if (meta) *meta = header.value("meta", nlohmann::json::object());
  return params;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write " + path.string());
  out << text;
  if (!out) throw InvalidInput("failed writing " + path.string());
}

}  // namespace bforge::io
