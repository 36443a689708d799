#pragma once

#include <stdexcept>
#include <string>

namespace osal {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define OSAL_DEFINE_ERROR(Name)          \
  class Name : public Error {            \
   public:                               \
    using Error::Error;                  \
  }

OSAL_DEFINE_ERROR(FormatError);
OSAL_DEFINE_ERROR(LabelRangeError);
OSAL_DEFINE_ERROR(BudgetError);
OSAL_DEFINE_ERROR(ShapeError);
OSAL_DEFINE_ERROR(PoolMembershipError);
OSAL_DEFINE_ERROR(EmptyBatchError);
OSAL_DEFINE_ERROR(VariantError);
OSAL_DEFINE_ERROR(EmptyPoolError);
OSAL_DEFINE_ERROR(DegenerateStatsError);
OSAL_DEFINE_ERROR(FitError);
OSAL_DEFINE_ERROR(ContractError);
OSAL_DEFINE_ERROR(AggregationError);
OSAL_DEFINE_ERROR(ConfigError);
OSAL_DEFINE_ERROR(IoError);

#undef OSAL_DEFINE_ERROR

/// Non-finite value encountered; `epoch` is -1 outside training.
class NumericsError : public Error {
 public:
  explicit NumericsError(const std::string& what, int epoch = -1)
      : Error(epoch < 0 ? what : what + " (epoch " + std::to_string(epoch) + ")"),
        epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

/// Raised by a stage when the unlabeled pool is empty; the loop treats it as a stop signal.
class PoolExhausted : public Error {
 public:
  using Error::Error;
};

}  // namespace osal
