#include "qaclims/remote.hpp"

#include "httplib.h"
#include "json.hpp"

#include <cstdlib>

namespace qaclims::remote {

using nlohmann::json;

namespace {

httplib::Client make_client(const std::string& endpoint, int timeout) {
  httplib::Client cli(endpoint);
  cli.set_connection_timeout(timeout, 0);
  cli.set_read_timeout(timeout, 0);
  cli.set_write_timeout(timeout, 0);
  return cli;
}

json parse_reply(const httplib::Result& res, const std::string& what) {
  if (!res) throw IoError(what + ": " + httplib::to_string(res.error()));
  if (res->status != 200) throw IoError(what + ": HTTP " + std::to_string(res->status));
  try {
    return json::parse(res->body);
  } catch (const json::exception& e) {
    throw FormatError(what + ": malformed reply: " + e.what());
  }
}

}  // namespace

std::optional<std::string> endpoint_from_env(const char* var) {
  const char* v = std::getenv(var);
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

std::string image_payload(const RasterImage& image) {
  std::vector<double> rgb;
  rgb.reserve(static_cast<std::size_t>(3 * image.pixels()));
  for (const auto& c : image.rgb)
    for (Eigen::Index y = 0; y < c.rows(); ++y)
      for (Eigen::Index x = 0; x < c.cols(); ++x) rgb.push_back(c(y, x));
  return json{{"height", image.height()}, {"width", image.width()}, {"rgb", rgb}}.dump();
}

HttpVqaBackend::HttpVqaBackend(std::string endpoint, int timeout_seconds)
    : endpoint_(std::move(endpoint)), timeout_(timeout_seconds) {}

std::string HttpVqaBackend::answer(const RasterImage& image, const std::string& question) {
  auto cli = make_client(endpoint_, timeout_);
  const std::string body = R"({"image":)" + image_payload(image) + R"(,"question":)" + json(question).dump() + "}";
  const json reply = parse_reply(cli.Post("/answer", body, "application/json"), "VQA request to " + endpoint_);
  if (!reply.contains("answer") || !reply["answer"].is_string())
    throw FormatError("VQA reply from " + endpoint_ + " has no answer string");
  return reply["answer"].get<std::string>();
}

HttpEncoderPair::HttpEncoderPair(std::string endpoint, int timeout_seconds)
    : endpoint_(std::move(endpoint)), timeout_(timeout_seconds) {
  auto cli = make_client(endpoint_, timeout_);
  const json info = parse_reply(cli.Get("/info"), "encoder info from " + endpoint_);
  if (!info.contains("dim") || !info["dim"].is_number_integer() || info["dim"].get<int>() < 1)
    throw FormatError("encoder info from " + endpoint_ + " lacks a positive integer dim");
  dim_ = info["dim"].get<int>();
}

Embedding HttpEncoderPair::post_embedding(const std::string& path, const std::string& body) {
  auto cli = make_client(endpoint_, timeout_);
  const json reply = parse_reply(cli.Post(path, body, "application/json"), "encoder request to " + endpoint_ + path);
  std::vector<double> v;
  try {
    v = reply.at("embedding").get<std::vector<double>>();
  } catch (const json::exception&) {
    throw FormatError("encoder reply from " + endpoint_ + path + " has no embedding array");
  }
  if (static_cast<int>(v.size()) != dim_)
    throw DimensionError("encoder returned " + std::to_string(v.size()) + " values, expected " + std::to_string(dim_));
  return Eigen::Map<const Eigen::VectorXd>(v.data(), dim_);
}

Embedding HttpEncoderPair::encode_image(const RasterImage& image) {
  return post_embedding("/encode_image", R"({"image":)" + image_payload(image) + "}");
}

Embedding HttpEncoderPair::encode_text(const std::string& text) {
  return post_embedding("/encode_text", json{{"text", text}}.dump());
}

}  // namespace qaclims::remote
