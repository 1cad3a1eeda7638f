#pragma once

#include <stdexcept>
#include <string>

namespace eqtime {

// Exit codes used by the CLI map one-to-one onto these categories.
enum class ErrorCategory {
  kDimension = 10,
  kDegenerateRow = 11,
  kContract = 12,
  kConfiguration = 2,
  kIngestion = 3,
  kPersistence = 4,
  kTraining = 5,
  kEstimation = 6,
  kStatistics = 7,
  kUnknownType = 8,
};

const char* to_string(ErrorCategory category);

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

#define EQTIME_DEFINE_ERROR(Name, Category)                                   \
  class Name : public Error {                                                 \
   public:                                                                    \
    explicit Name(const std::string& what) : Error(ErrorCategory::Category, what) {} \
  };

EQTIME_DEFINE_ERROR(DimensionError, kDimension)
EQTIME_DEFINE_ERROR(DegenerateRowError, kDegenerateRow)
EQTIME_DEFINE_ERROR(ContractError, kContract)
EQTIME_DEFINE_ERROR(ConfigError, kConfiguration)
EQTIME_DEFINE_ERROR(IngestionError, kIngestion)
EQTIME_DEFINE_ERROR(PersistenceError, kPersistence)
EQTIME_DEFINE_ERROR(TrainingError, kTraining)
EQTIME_DEFINE_ERROR(EstimationError, kEstimation)
EQTIME_DEFINE_ERROR(StatisticsError, kStatistics)
EQTIME_DEFINE_ERROR(UnknownTypeError, kUnknownType)

#undef EQTIME_DEFINE_ERROR

}  // namespace eqtime
