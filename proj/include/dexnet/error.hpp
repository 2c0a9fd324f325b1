#pragma once

#include <stdexcept>
#include <string>

namespace dexnet {

/// Coarse failure category. The CLI maps these onto process exit codes.
enum class ErrorCategory { config, data, numeric, campaign, io };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

#define DEXNET_DEFINE_ERROR(Name, Category)                                 \
  class Name : public Error {                                              \
   public:                                                                 \
    explicit Name(const std::string& what)                                 \
        : Error(ErrorCategory::Category, std::string(#Name ": ") + what) {} \
  };

// dataset ingestion and protocols
DEXNET_DEFINE_ERROR(NoClassesFound, data)
DEXNET_DEFINE_ERROR(ClassEmpty, data)
DEXNET_DEFINE_ERROR(ProtocolClassMissing, data)
DEXNET_DEFINE_ERROR(ClassOverlap, data)
DEXNET_DEFINE_ERROR(CannotPartition, data)
DEXNET_DEFINE_ERROR(InsufficientSupport, data)
DEXNET_DEFINE_ERROR(InsufficientQuery, data)
DEXNET_DEFINE_ERROR(DecodeError, data)

// critics
DEXNET_DEFINE_ERROR(WeightsUnavailable, data)
DEXNET_DEFINE_ERROR(LeakageError, config)
DEXNET_DEFINE_ERROR(TrainingDiverged, numeric)
DEXNET_DEFINE_ERROR(NumericalError, numeric)

// features
DEXNET_DEFINE_ERROR(DimensionError, config)
DEXNET_DEFINE_ERROR(CacheCorrupt, data)
DEXNET_DEFINE_ERROR(IncompleteBundle, data)
DEXNET_DEFINE_ERROR(ChunkError, config)

// heads and campaigns
DEXNET_DEFINE_ERROR(ConfigError, config)
DEXNET_DEFINE_ERROR(LabelError, data)
DEXNET_DEFINE_ERROR(EmptyQuery, data)
DEXNET_DEFINE_ERROR(EmptyAggregate, data)
DEXNET_DEFINE_ERROR(CampaignFailed, campaign)
DEXNET_DEFINE_ERROR(IoError, io)

#undef DEXNET_DEFINE_ERROR

inline int exit_code_for(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::config:
      return 2;
    case ErrorCategory::campaign:
      return 4;
    case ErrorCategory::data:
    case ErrorCategory::numeric:
    case ErrorCategory::io:
      return 3;
  }
  return 1;
}

}  // namespace dexnet
