#pragma once

#include <stdexcept>
#include <string>

namespace fraclab {

/// Base class for every error raised by the library. `kind()` is a stable
/// machine-readable tag used by the CLI error JSON.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define FRACLAB_DEFINE_ERROR(Name)                                        \
    class Name : public Error {                                           \
    public:                                                               \
        explicit Name(const std::string& what) : Error(#Name, what) {}    \
    }

FRACLAB_DEFINE_ERROR(ParamError);
FRACLAB_DEFINE_ERROR(DomainError);
FRACLAB_DEFINE_ERROR(OverlapError);
FRACLAB_DEFINE_ERROR(SupportError);
FRACLAB_DEFINE_ERROR(ShapeError);
FRACLAB_DEFINE_ERROR(ConvergenceError);
FRACLAB_DEFINE_ERROR(SingularSystemError);
FRACLAB_DEFINE_ERROR(BarrierError);
FRACLAB_DEFINE_ERROR(SmallnessError);
FRACLAB_DEFINE_ERROR(DivergenceError);
FRACLAB_DEFINE_ERROR(MissingBlockError);
FRACLAB_DEFINE_ERROR(StencilError);
FRACLAB_DEFINE_ERROR(IllConditionedError);
FRACLAB_DEFINE_ERROR(RankDeficientError);
FRACLAB_DEFINE_ERROR(ConfigError);

#undef FRACLAB_DEFINE_ERROR

}  // namespace fraclab
