#pragma once

// On-disk layout of a layer set:
//   foreground.png   RGBA
//   background.png   RGB
//   composite.png    RGB
//   mask_obj.png     1-bit, image resolution
//   mask_box.png     1-bit, image resolution
//   metadata.json    config snapshot and run metadata
//   fg_bundle/, comp_bundle/

#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "taue/config.hpp"
#include "taue/image.hpp"
#include "taue/ntc.hpp"
#include "taue/pipeline.hpp"

namespace taue {

inline constexpr const char* kLayerNames[] = {"foreground", "background", "composite", "mask"};

template <typename Tag>
Mask<Tag> downscale_mask(const Mask<Tag>& m, std::size_t factor) {
  if (m.height() % factor || m.width() % factor) throw InvalidArgument("mask size is not a multiple of the factor");
  Mask<Tag> out(m.height() / factor, m.width() / factor);
  for (std::size_t y = 0; y < out.height(); ++y)
    for (std::size_t x = 0; x < out.width(); ++x) out.set(y, x, m(y * factor, x * factor));
  return out;
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("short write to " + path.string());
}

inline void save_layerset(const std::filesystem::path& dir, const LayerSet& ls) {
  std::filesystem::create_directories(dir);
  save_png((dir / "foreground.png").string(), ls.foreground);
  save_png((dir / "background.png").string(), ls.background);
  save_png((dir / "composite.png").string(), ls.composite);
  save_png((dir / "mask_obj.png").string(), mask_to_image(upscale_mask(ls.m_obj, kLatentScale)), true);
  save_png((dir / "mask_box.png").string(), mask_to_image(upscale_mask(ls.box_mask, kLatentScale)), true);
  nlohmann::json meta = ls.metadata;
  meta["config"] = to_json(ls.config);
  write_json_file(dir / "metadata.json", meta);
  save_bundle(dir / "fg_bundle", ls.fg_bundle);
  save_bundle(dir / "comp_bundle", ls.comp_bundle);
}

inline LayerSet load_layerset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw NotFoundError("no layer set at " + dir.string());
  LayerSet ls;
  ls.foreground = load_png((dir / "foreground.png").string());
  ls.foreground_rgb = to_rgb(ls.foreground);
  ls.background = load_png((dir / "background.png").string());
  ls.composite = load_png((dir / "composite.png").string());
  ls.m_obj = downscale_mask(image_to_mask<ObjectMaskTag>(load_png((dir / "mask_obj.png").string())), kLatentScale);
  ls.box_mask = downscale_mask(image_to_mask<BoxMaskTag>(load_png((dir / "mask_box.png").string())), kLatentScale);
  nlohmann::json meta = parse_json_file((dir / "metadata.json").string());
  if (!meta.contains("config")) throw ConfigError((dir / "metadata.json").string(), "missing config snapshot");
  ls.config = config_from_json(meta["config"]);
  meta.erase("config");
  ls.metadata = std::move(meta);
  ls.fg_bundle = load_bundle(dir / "fg_bundle");
  ls.comp_bundle = load_bundle(dir / "comp_bundle");
  return ls;
}

}  // namespace taue
