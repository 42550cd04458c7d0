#pragma once

// Region-restricted PSNR/SSIM, the fg/bg region-split report, benchmark
// annotation filtering, and the hook for externally computed scores.

#include <array>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "taue/core.hpp"
#include "taue/image.hpp"
#include "taue/masks.hpp"
#include "taue/pipeline.hpp"

namespace taue {

// Reported instead of +inf for identical inputs.
inline constexpr double kPsnrSentinel = 99.0;

struct RegionMaskTag {};
// Binary region at image resolution.
using RegionMask = Mask<RegionMaskTag>;

template <typename Tag>
RegionMask as_region(const Mask<Tag>& m) {
  return RegionMask(m.grid());
}

namespace detail {

inline void require_comparable(const Image& a, const Image& b, const RegionMask& region) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels) throw InvalidArgument("images differ in shape");
  if (region.width() != a.width || region.height() != a.height) throw InvalidArgument("region does not match image size");
}

}  // namespace detail

// Mean squared error over region pixels (all channels), or nullopt for an empty region.
inline std::optional<double> region_mse(const Image& a, const Image& b, const RegionMask& region) {
  detail::require_comparable(a, b, region);
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t y = 0; y < a.height; ++y) {
    for (std::size_t x = 0; x < a.width; ++x) {
      if (!region(y, x)) continue;
      for (std::size_t c = 0; c < a.channels; ++c) {
        const double d = static_cast<double>(a.at(y, x, c)) - static_cast<double>(b.at(y, x, c));
        acc += d * d;
      }
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return acc / static_cast<double>(n * a.channels);
}

// 10 log10(255^2 / MSE) over the region, capped at the sentinel.
inline double psnr(const Image& a, const Image& b, const RegionMask& region) {
  const auto mse = region_mse(a, b, region);
  if (!mse) throw InvalidArgument("psnr: empty region");
  if (*mse == 0.0) return kPsnrSentinel;
  return std::min(kPsnrSentinel, 10.0 * std::log10(255.0 * 255.0 / *mse));
}

inline double psnr(const Image& a, const Image& b) { return psnr(a, b, RegionMask(a.height, a.width, true)); }

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 255.0;
};

// Mean local SSIM (Gaussian-weighted window) over window centres that lie in the
// region and keep the whole window inside the image; channels are averaged.
inline double ssim(const Image& a, const Image& b, const RegionMask& region, const SsimOptions& opt = {}) {
  detail::require_comparable(a, b, region);
  const std::size_t r = opt.window / 2;
  if (a.width < opt.window || a.height < opt.window) throw InvalidArgument("ssim: image smaller than one window");
  std::vector<double> k1d(opt.window);
  double ksum = 0.0;
  for (std::size_t i = 0; i < opt.window; ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(r);
    k1d[i] = std::exp(-0.5 * d * d / (opt.sigma * opt.sigma));
    ksum += k1d[i];
  }
  for (double& v : k1d) v /= ksum;
  const double c1 = (opt.k1 * opt.data_range) * (opt.k1 * opt.data_range);
  const double c2 = (opt.k2 * opt.data_range) * (opt.k2 * opt.data_range);

  std::size_t centres = 0;
  for (std::size_t y = r; y + r < a.height; ++y)
    for (std::size_t x = r; x + r < a.width; ++x)
      if (region(y, x)) ++centres;
  if (centres == 0) throw InvalidArgument("ssim: region contains no complete window");

  const std::size_t w = a.width, h = a.height;
  double total = 0.0;
  for (std::size_t c = 0; c < a.channels; ++c) {
    // Horizontal pass of the five moment images, vertical pass only at centres.
    std::vector<double> hx(h * w), hy(h * w), hxx(h * w), hyy(h * w), hxy(h * w);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = r; x + r < w; ++x) {
        double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
        for (std::size_t i = 0; i < opt.window; ++i) {
          const double u = a.at(y, x + i - r, c), v = b.at(y, x + i - r, c), wt = k1d[i];
          sx += wt * u;
          sy += wt * v;
          sxx += wt * u * u;
          syy += wt * v * v;
          sxy += wt * u * v;
        }
        hx[y * w + x] = sx, hy[y * w + x] = sy, hxx[y * w + x] = sxx, hyy[y * w + x] = syy, hxy[y * w + x] = sxy;
      }
    }
    double acc = 0.0;
    for (std::size_t y = r; y + r < h; ++y) {
      for (std::size_t x = r; x + r < w; ++x) {
        if (!region(y, x)) continue;
        double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
        for (std::size_t i = 0; i < opt.window; ++i) {
          const std::size_t p = (y + i - r) * w + x;
          const double wt = k1d[i];
          mx += wt * hx[p];
          my += wt * hy[p];
          mxx += wt * hxx[p];
          myy += wt * hyy[p];
          mxy += wt * hxy[p];
        }
        const double vx = mxx - mx * mx, vy = myy - my * my, cxy = mxy - mx * my;
        acc += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
    }
    total += acc / static_cast<double>(centres);
  }
  return total / static_cast<double>(a.channels);
}

inline double ssim(const Image& a, const Image& b) { return ssim(a, b, RegionMask(a.height, a.width, true)); }

struct RegionReport {
  std::optional<double> psnr_fg;
  std::optional<double> psnr_bg;
  std::optional<double> ssim_fg;
  std::optional<double> ssim_bg;
  std::size_t fg_pixels = 0;
  std::size_t bg_pixels = 0;
  std::vector<std::string> flags;
  nlohmann::json config;  // metadata of the evaluated layer set

  bool complete() const { return psnr_fg && psnr_bg && ssim_fg && ssim_bg; }
};

// fg: composite vs foreground inside the (x8 upsampled) object mask;
// bg: composite vs background outside it.
inline RegionReport region_split_eval(const Image& composite, const Image& foreground, const Image& background,
                                      const ObjectMask& m_obj) {
  const Image all = to_rgb(composite), fg = to_rgb(foreground), bg = to_rgb(background);
  const std::size_t factor = all.width / std::max<std::size_t>(1, m_obj.width());
  const RegionMask inside = as_region(upscale_mask(m_obj, factor));
  const RegionMask outside = inside.complement();
  RegionReport rep;
  rep.fg_pixels = inside.count();
  rep.bg_pixels = outside.count();
  const auto fill = [&](const Image& other, const RegionMask& region, std::optional<double>& p, std::optional<double>& s,
                        const char* name) {
    if (region.count() == 0) {
      rep.flags.push_back(std::string(name) + "_region_empty");
      return;
    }
    p = psnr(all, other, region);
    try {
      s = ssim(all, other, region);
    } catch (const InvalidArgument&) {
      rep.flags.push_back(std::string(name) + "_region_smaller_than_window");
    }
  };
  fill(fg, inside, rep.psnr_fg, rep.ssim_fg, "fg");
  fill(bg, outside, rep.psnr_bg, rep.ssim_bg, "bg");
  return rep;
}

inline RegionReport region_split_eval(const LayerSet& ls) {
  RegionReport rep = region_split_eval(ls.composite, ls.foreground, ls.background, ls.m_obj);
  rep.config = ls.metadata;
  return rep;
}

inline nlohmann::json to_json(const RegionReport& r) {
  const auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"psnr_fg", opt(r.psnr_fg)}, {"psnr_bg", opt(r.psnr_bg)}, {"ssim_fg", opt(r.ssim_fg)}, {"ssim_bg", opt(r.ssim_bg)},
          {"fg_pixels", r.fg_pixels},  {"bg_pixels", r.bg_pixels}, {"flags", r.flags}};
}

// ---------------------------------------------------------------------------
// Benchmark filtering.
// ---------------------------------------------------------------------------

struct Annotation {
  std::string image_id;
  std::array<double, 4> bbox{};  // x, y, w, h
  double area_ratio = 0.0;       // bbox area / image area
  bool crowd = false;

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct BenchmarkFilter {
  double min_bbox_area_ratio = 0.03;
  bool exclude_crowd = true;

  void validate() const {
    if (!(min_bbox_area_ratio > 0.0 && min_bbox_area_ratio < 1.0)) throw InvalidArgument("min_bbox_area_ratio must lie in (0, 1)");
  }
};

// Keeps non-crowd entries whose box covers at least the minimum area ratio,
// in input order. Entries with a non-finite or out-of-range ratio are skipped.
inline std::vector<Annotation> filter_benchmark(const std::vector<Annotation>& in, const BenchmarkFilter& f = {},
                                                std::vector<std::string>* warnings = nullptr) {
  f.validate();
  std::vector<Annotation> out;
  for (const auto& a : in) {
    if (!std::isfinite(a.area_ratio) || a.area_ratio < 0.0 || a.area_ratio > 1.0) {
      const std::string msg = "skipping malformed annotation for image '" + a.image_id + "'";
      std::cerr << "taue: warning: " << msg << '\n';
      if (warnings) warnings->push_back(msg);
      continue;
    }
    if (f.exclude_crowd && a.crowd) continue;
    if (a.area_ratio < f.min_bbox_area_ratio) continue;
    out.push_back(a);
  }
  return out;
}

// COCO-style annotation document: "annotations" [{image_id, bbox, iscrowd,
// [area_ratio]}] and optional "images" [{id, width, height}] to normalize bbox
// area. Malformed entries are skipped with a warning.
inline std::vector<Annotation> parse_annotations(const nlohmann::json& doc, std::vector<std::string>* warnings = nullptr) {
  const auto warn = [&](const std::string& msg) {
    std::cerr << "taue: warning: " << msg << '\n';
    if (warnings) warnings->push_back(msg);
  };
  const auto id_string = [](const nlohmann::json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
  std::map<std::string, std::pair<double, double>> sizes;
  if (doc.contains("images") && doc["images"].is_array()) {
    for (const auto& im : doc["images"]) {
      if (im.contains("id") && im.contains("width") && im.contains("height") && im["width"].is_number() && im["height"].is_number()) {
        sizes[id_string(im["id"])] = {im["width"].get<double>(), im["height"].get<double>()};
      }
    }
  }
  std::vector<Annotation> out;
  if (!doc.contains("annotations") || !doc["annotations"].is_array()) throw InvalidArgument("annotation document has no 'annotations' array");
  std::size_t index = 0;
  for (const auto& e : doc["annotations"]) {
    const std::string where = "annotations[" + std::to_string(index++) + "]";
    if (!e.is_object() || !e.contains("image_id") || !e.contains("bbox") || !e["bbox"].is_array() || e["bbox"].size() != 4) {
      warn(where + ": missing image_id or 4-element bbox");
      continue;
    }
    Annotation a;
    a.image_id = id_string(e["image_id"]);
    bool ok = true;
    for (std::size_t i = 0; i < 4; ++i) {
      if (!e["bbox"][i].is_number()) ok = false;
      else a.bbox[i] = e["bbox"][i].get<double>();
    }
    if (!ok) {
      warn(where + ": non-numeric bbox");
      continue;
    }
    if (e.contains("iscrowd")) {
      const auto& c = e["iscrowd"];
      if (c.is_boolean()) a.crowd = c.get<bool>();
      else if (c.is_number()) a.crowd = c.get<double>() != 0.0;
      else {
        warn(where + ": iscrowd is neither boolean nor number");
        continue;
      }
    }
    if (e.contains("area_ratio") && e["area_ratio"].is_number()) {
      a.area_ratio = e["area_ratio"].get<double>();
    } else if (auto it = sizes.find(a.image_id); it != sizes.end() && it->second.first > 0 && it->second.second > 0) {
      a.area_ratio = a.bbox[2] * a.bbox[3] / (it->second.first * it->second.second);
    } else {
      warn(where + ": no area_ratio and no image size for '" + a.image_id + "'");
      continue;
    }
    out.push_back(a);
  }
  return out;
}

// ---------------------------------------------------------------------------
// External scorers (FID, CLIP, LPIPS need pretrained networks and run outside).
// ---------------------------------------------------------------------------

inline constexpr const char* kScoreLabels[] = {"fid", "clip_i", "clip_text_score", "lpips_fg", "lpips_bg"};

class ExternalScorer {
 public:
  virtual ~ExternalScorer() = default;
  // Scores one layer-set directory; returns label -> value.
  virtual std::map<std::string, double> score(const std::string& layerset_dir) = 0;
};

// Runs `<command> <layerset_dir>` and reads a flat JSON object of numbers from stdout.
class SubprocessScorer final : public ExternalScorer {
 public:
  explicit SubprocessScorer(std::string command) : command_(std::move(command)) {}

  std::map<std::string, double> score(const std::string& layerset_dir) override {
    const std::string cmd = command_ + " '" + layerset_dir + "'";
    std::unique_ptr<FILE, int (*)(FILE*)> pipe(popen(cmd.c_str(), "r"), pclose);
    if (!pipe) throw IoError("cannot start scorer: " + command_);
    std::string out;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe.get())) out.append(buf, n);
    const int status = pclose(pipe.release());
    if (status != 0) throw IoError("scorer exited with status " + std::to_string(status));
    std::map<std::string, double> scores;
    try {
      const auto j = nlohmann::json::parse(out);
      for (const auto& [k, v] : j.items()) {
        if (v.is_number()) scores[k] = v.get<double>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw IoError(std::string("scorer output is not JSON: ") + e.what());
    }
    return scores;
  }

 private:
  std::string command_;
};

// Per-column mean over the rows that have the value; flags are not carried over.
inline RegionReport mean_report(const std::vector<RegionReport>& rows) {
  RegionReport out;
  const auto mean = [&](std::optional<double> RegionReport::*field) {
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows)
      if (r.*field) acc += *(r.*field), ++n;
    return n ? std::optional<double>(acc / static_cast<double>(n)) : std::nullopt;
  };
  out.psnr_fg = mean(&RegionReport::psnr_fg);
  out.psnr_bg = mean(&RegionReport::psnr_bg);
  out.ssim_fg = mean(&RegionReport::ssim_fg);
  out.ssim_bg = mean(&RegionReport::ssim_bg);
  for (const auto& r : rows) out.fg_pixels += r.fg_pixels, out.bg_pixels += r.bg_pixels;
  return out;
}

// ---------------------------------------------------------------------------
// Tables.
// ---------------------------------------------------------------------------

struct ReportRow {
  std::string label;
  RegionReport report;
  std::map<std::string, double> external;
};

// Aligned plain-text table: method, overall-quality external columns, the four
// region-split columns, then LPIPS columns when present.
inline std::string format_table(const std::vector<ReportRow>& rows, const std::vector<std::string>& external_columns = {}) {
  static const std::map<std::string, std::string> pretty{
      {"fid", "FID"}, {"clip_i", "CLIP-I"}, {"clip_text_score", "CLIP-S"}, {"lpips_fg", "LPIPS_fg"}, {"lpips_bg", "LPIPS_bg"}};
  std::vector<std::string> before, after;
  for (const auto& c : external_columns) (c.rfind("lpips", 0) == 0 ? after : before).push_back(c);

  std::vector<std::string> header{"Method"};
  const auto name = [&](const std::string& c) { return pretty.count(c) ? pretty.at(c) : c; };
  for (const auto& c : before) header.push_back(name(c));
  for (const char* c : {"PSNR_fg", "PSNR_bg", "SSIM_fg", "SSIM_bg"}) header.emplace_back(c);
  for (const auto& c : after) header.push_back(name(c));

  const auto num = [](const std::optional<double>& v, int prec) {
    if (!v) return std::string("-");
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(prec) << *v;
    return ss.str();
  };
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rows) {
    std::vector<std::string> line{r.label};
    const auto ext = [&](const std::string& c) {
      const auto it = r.external.find(c);
      line.push_back(it == r.external.end() ? "-" : num(it->second, 3));
    };
    for (const auto& c : before) ext(c);
    line.push_back(num(r.report.psnr_fg, 2));
    line.push_back(num(r.report.psnr_bg, 2));
    line.push_back(num(r.report.ssim_fg, 3));
    line.push_back(num(r.report.ssim_bg, 3));
    for (const auto& c : after) ext(c);
    cells.push_back(std::move(line));
  }
  std::vector<std::size_t> width(header.size());
  for (std::size_t i = 0; i < header.size(); ++i) {
    width[i] = header[i].size();
    for (const auto& line : cells) width[i] = std::max(width[i], line[i].size());
  }
  std::ostringstream out;
  const auto emit = [&](const std::vector<std::string>& line) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (i == 0) out << std::left << std::setw(static_cast<int>(width[i])) << line[i];
      else out << "  " << std::right << std::setw(static_cast<int>(width[i])) << line[i];
    }
    out << '\n';
  };
  emit(header);
  std::size_t total = 0;
  for (auto w : width) total += w + 2;
  out << std::string(total - 2, '-') << '\n';
  for (const auto& line : cells) emit(line);
  return out.str();
}

}  // namespace taue
