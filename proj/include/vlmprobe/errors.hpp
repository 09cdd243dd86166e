#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vlmprobe {

/// Base class for every error raised by the harness. `kind()` is the stable
/// identifier written into trial records and CLI diagnostics.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define VLMPROBE_DEFINE_ERROR(Name)                                         \
  class Name : public Error {                                               \
   public:                                                                  \
    explicit Name(const std::string& message) : Error(#Name, message) {}    \
  }

// dataset_synth
VLMPROBE_DEFINE_ERROR(ConfigError);
VLMPROBE_DEFINE_ERROR(PlacementInfeasible);
VLMPROBE_DEFINE_ERROR(RenderBoundsError);
VLMPROBE_DEFINE_ERROR(ImageDecodeError);
VLMPROBE_DEFINE_ERROR(IoError);

// corpus_ingest
VLMPROBE_DEFINE_ERROR(ManifestParseError);
VLMPROBE_DEFINE_ERROR(InvalidCountError);

// prompt_matrix
VLMPROBE_DEFINE_ERROR(UnknownTaskClass);
VLMPROBE_DEFINE_ERROR(MissingShapeError);
VLMPROBE_DEFINE_ERROR(UnexpectedShapeError);

// examine_protocol
VLMPROBE_DEFINE_ERROR(TransportError);
VLMPROBE_DEFINE_ERROR(SchemaError);
VLMPROBE_DEFINE_ERROR(DimensionMismatch);
VLMPROBE_DEFINE_ERROR(BackendError);
VLMPROBE_DEFINE_ERROR(UnknownImage);
VLMPROBE_DEFINE_ERROR(UnknownPreset);
VLMPROBE_DEFINE_ERROR(EndpointUnreachable);

// attention_analysis / metrics_report
VLMPROBE_DEFINE_ERROR(ZeroMassError);
VLMPROBE_DEFINE_ERROR(EmptyGroup);
VLMPROBE_DEFINE_ERROR(EmptyInput);

#undef VLMPROBE_DEFINE_ERROR

/// Raised by corpus loading; lists every missing file at once.
class MissingImageError : public Error {
 public:
  explicit MissingImageError(std::vector<std::string> missing);

  const std::vector<std::string>& missing() const noexcept { return missing_; }

 private:
  std::vector<std::string> missing_;
};

}  // namespace vlmprobe
