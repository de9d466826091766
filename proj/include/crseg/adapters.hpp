#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <istream>
#include <limits>
#include <mutex>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "crseg/inpaint.hpp"
#include "crseg/io/formats.hpp"
#include "crseg/prompt_masker.hpp"

// Line-delimited JSON protocol for out-of-process maskers and inpainters.
//
// Every request and every response is one JSON object on one line. Images
// travel as paths to 8-bit PPM files; binary masks travel run-length
// encoded. A failed request is answered with {"error": "..."}.
//
//   masker request     {"image": path, "prompts": [[u, v], ...]}      (null for a non-finite coordinate)
//   masker response    {"masks": [mask...], "skipped": [{"prompt": i, "reason": s}, ...]}
//   inpainter request  {"image": path, "output": path, "mask": mask, "prompt": text,
//                       "guidance_scale": g, "inference_steps": n, "seed": s}
//   inpainter response {"image": path}
//
// mask = {"height": H, "width": W, "rle": [n0, n1, ...], "class": c?, "provenance": [i...]?}
// where the runs alternate between 0 and 1 pixels in row-major order,
// starting with a (possibly empty) run of zeros.

namespace crseg::adapters {

using json = nlohmann::json;
using masks::BinaryMask;

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::vector<std::uint64_t> rle_encode(const BinaryMask& m) {
  std::vector<std::uint64_t> runs;
  std::uint8_t current = 0;
  std::uint64_t n = 0;
  for (auto b : m.bits) {
    if (b != current) {
      runs.push_back(n);
      current = b;
      n = 0;
    }
    ++n;
  }
  runs.push_back(n);
  return runs;
}

inline BinaryMask rle_decode(const std::vector<std::uint64_t>& runs, std::size_t height, std::size_t width) {
  BinaryMask m(height, width);
  std::size_t pos = 0;
  std::uint8_t value = 0;
  for (auto n : runs) {
    if (n > m.bits.size() - pos) throw ProtocolError("rle runs exceed the mask size");
    std::fill_n(m.bits.begin() + static_cast<std::ptrdiff_t>(pos), n, value);
    pos += n;
    value ^= 1;
  }
  if (pos != m.bits.size()) throw ProtocolError("rle runs cover " + std::to_string(pos) + " of " +
                                                std::to_string(m.bits.size()) + " pixels");
  return m;
}

inline json mask_to_json(const BinaryMask& m) {
  json j;
  j["height"] = m.height;
  j["width"] = m.width;
  j["rle"] = rle_encode(m);
  if (m.class_index) j["class"] = *m.class_index;
  if (!m.provenance.empty()) j["provenance"] = m.provenance;
  return j;
}

inline BinaryMask mask_from_json(const json& j) {
  try {
    auto m = rle_decode(j.at("rle").get<std::vector<std::uint64_t>>(), j.at("height").get<std::size_t>(),
                        j.at("width").get<std::size_t>());
    if (j.contains("class")) m.class_index = j.at("class").get<std::size_t>();
    if (j.contains("provenance")) m.provenance = j.at("provenance").get<std::vector<std::size_t>>();
    return m;
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed mask: ") + e.what());
  }
}

inline json masker_request(const std::filesystem::path& image, std::span<const prompting::PixelPrompt> prompts) {
  json j;
  j["image"] = image.string();
  j["prompts"] = json::array();
  for (const auto& p : prompts) {
    json pt = json::array();
    pt.push_back(std::isfinite(p.u) ? json(p.u) : json(nullptr));
    pt.push_back(std::isfinite(p.v) ? json(p.v) : json(nullptr));
    j["prompts"].push_back(pt);
  }
  return j;
}

inline json masker_response(const prompting::PromptMaskResult& r) {
  json j;
  j["masks"] = json::array();
  for (const auto& m : r.masks) j["masks"].push_back(mask_to_json(m));
  j["skipped"] = json::array();
  for (const auto& s : r.skipped) j["skipped"].push_back({{"prompt", s.prompt_index}, {"reason", s.reason}});
  return j;
}

inline prompting::PromptMaskResult parse_masker_response(const json& j) {
  prompting::PromptMaskResult r;
  try {
    for (const auto& m : j.at("masks")) r.masks.push_back(mask_from_json(m));
    for (const auto& s : j.at("skipped"))
      r.skipped.push_back({s.at("prompt").get<std::size_t>(), s.at("reason").get<std::string>()});
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed masker response: ") + e.what());
  }
  return r;
}

inline json handle_masker_request(const json& req, const prompting::PromptMasker& masker) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<prompting::PixelPrompt> prompts;
  try {
    for (const auto& p : req.at("prompts")) {
      if (!p.is_array() || p.size() != 2) throw ProtocolError("prompt must be a [u, v] pair");
      prompts.push_back({p[0].is_null() ? nan : p[0].get<double>(), p[1].is_null() ? nan : p[1].get<double>()});
    }
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed masker request: ") + e.what());
  }
  const auto image = io::load_ppm(req.at("image").get<std::string>());
  return masker_response(masker.masks_for_prompts(image, prompts));
}

inline json inpaint_request_json(const std::filesystem::path& image, const std::filesystem::path& output,
                                 const inpaint::InpaintRequest& r) {
  json j;
  j["image"] = image.string();
  j["output"] = output.string();
  j["mask"] = mask_to_json(r.mask);
  j["prompt"] = r.prompt;
  j["guidance_scale"] = r.config.guidance_scale;
  j["inference_steps"] = r.config.inference_steps;
  j["seed"] = r.config.seed;
  return j;
}

inline json handle_inpaint_request(const json& req, const inpaint::Inpainter& inpainter) {
  inpaint::InpaintRequest r;
  std::string output;
  try {
    r.mask = mask_from_json(req.at("mask"));
    r.prompt = req.at("prompt").get<std::string>();
    r.config.guidance_scale = req.at("guidance_scale").get<double>();
    r.config.inference_steps = req.at("inference_steps").get<int>();
    r.config.seed = req.at("seed").get<std::uint64_t>();
    output = req.at("output").get<std::string>();
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed inpainter request: ") + e.what());
  }
  r.config.validate();
  r.image = io::load_ppm(req.at("image").get<std::string>());
  if (r.mask.height != r.image.height || r.mask.width != r.image.width) {
    throw ProtocolError("mask and image sizes differ");
  }
  io::save_ppm(output, inpainter.inpaint(r));
  return {{"image", output}};
}

/// Answers one request per input line until end of input. Returns the number
/// of requests that failed.
inline std::size_t serve_lines(std::istream& in, std::ostream& out, const std::function<json(const json&)>& handler) {
  std::size_t failures = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json reply;
    try {
      reply = handler(json::parse(line));
    } catch (const std::exception& e) {
      reply = {{"error", e.what()}};
      ++failures;
    }
    out << reply.dump() << '\n' << std::flush;
  }
  return failures;
}

/// Request/response over a pair of streams, one call at a time.
class LineTransport {
 public:
  LineTransport(std::istream& in, std::ostream& out) : in_(in), out_(out) {}

  json call(const json& request) {
    std::lock_guard lock(mutex_);
    out_ << request.dump() << '\n' << std::flush;
    std::string line;
    if (!std::getline(in_, line)) throw ProtocolError("adapter closed the connection");
    json reply;
    try {
      reply = json::parse(line);
    } catch (const json::exception& e) {
      throw ProtocolError(std::string("adapter sent invalid JSON: ") + e.what());
    }
    if (reply.contains("error")) throw ProtocolError("adapter error: " + reply["error"].get<std::string>());
    return reply;
  }

 private:
  std::istream& in_;
  std::ostream& out_;
  std::mutex mutex_;
};

/// Scratch file names unique within the process.
inline std::filesystem::path scratch_file(const std::filesystem::path& dir, const std::string& stem) {
  static std::atomic<std::uint64_t> counter{0};
  return dir / (stem + "_" + std::to_string(counter++) + ".ppm");
}

class RemoteMasker final : public prompting::PromptMasker {
 public:
  RemoteMasker(LineTransport& transport, std::filesystem::path scratch)
      : transport_(transport), scratch_(std::move(scratch)) {}

  prompting::PromptMaskResult masks_for_prompts(const Image& image,
                                                std::span<const prompting::PixelPrompt> prompts) const override {
    const auto path = scratch_file(scratch_, "masker");
    io::save_ppm(path, image);
    auto result = parse_masker_response(transport_.call(masker_request(path, prompts)));
    std::filesystem::remove(path);
    return result;
  }

 private:
  LineTransport& transport_;
  std::filesystem::path scratch_;
};

class RemoteInpainter final : public inpaint::Inpainter {
 public:
  RemoteInpainter(LineTransport& transport, std::filesystem::path scratch)
      : transport_(transport), scratch_(std::move(scratch)) {}

  Image inpaint(const inpaint::InpaintRequest& request) const override {
    const auto in = scratch_file(scratch_, "inpaint_in"), out = scratch_file(scratch_, "inpaint_out");
    io::save_ppm(in, request.image);
    const auto reply = transport_.call(inpaint_request_json(in, out, request));
    auto image = io::load_ppm(reply.at("image").get<std::string>());
    std::filesystem::remove(in);
    std::filesystem::remove(out);
    return image;
  }

 private:
  LineTransport& transport_;
  std::filesystem::path scratch_;
};

}  // namespace crseg::adapters
