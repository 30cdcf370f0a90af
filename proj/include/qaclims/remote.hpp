#pragma once

#include "qaclims/corpus.hpp"
#include "qaclims/encoders.hpp"

#include <memory>
#include <optional>
#include <string>

namespace qaclims::remote {

inline constexpr const char* kVqaEndpointVar = "QACLIMS_VQA_ENDPOINT";
inline constexpr const char* kEncoderEndpointVar = "QACLIMS_ENCODER_ENDPOINT";

/// Value of an environment variable, or nullopt when unset or empty.
std::optional<std::string> endpoint_from_env(const char* var);

/// JSON body {"height", "width", "rgb": [...]}; rgb is one flat array, the
/// red, green and blue planes in turn, each row-major.
std::string image_payload(const RasterImage& image);

/// POST <endpoint>/answer with {"image": ..., "question": "..."}; expects
/// {"answer": "..."}. Transport failures throw IoError, so a caller collecting
/// answers can record them as empty.
class HttpVqaBackend final : public corpus::VqaBackend {
 public:
  explicit HttpVqaBackend(std::string endpoint, int timeout_seconds = 30);

  std::string answer(const RasterImage& image, const std::string& question) override;
  std::string id() const override { return "http:" + endpoint_; }

 private:
  std::string endpoint_;
  int timeout_;
};

/// GET <endpoint>/info gives {"dim": D}. POST /encode_image and /encode_text
/// return {"embedding": [...]} of length D. No pooling basis is available, so
/// this pair can score losses but cannot drive training.
class HttpEncoderPair final : public EncoderPair {
 public:
  explicit HttpEncoderPair(std::string endpoint, int timeout_seconds = 30);

  Embedding encode_image(const RasterImage& image) override;
  Embedding encode_text(const std::string& text) override;
  int dim() const override { return dim_; }
  std::string id() const override { return "http:" + endpoint_; }

 private:
  Embedding post_embedding(const std::string& path, const std::string& body);

  std::string endpoint_;
  int timeout_;
  int dim_ = 0;
};

}  // namespace qaclims::remote
