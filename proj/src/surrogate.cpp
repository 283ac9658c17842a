#include "sew/surrogate.hpp"

namespace sew {

SurrogateKind parse_surrogate_kind(const std::string& name) {
  if (name == "arctan") return SurrogateKind::ArcTan;
  if (name == "rectangular") return SurrogateKind::Rectangular;
  if (name == "constant1") return SurrogateKind::Constant1;
  throw ConfigError("unknown surrogate '" + name +
                    "' (expected arctan, rectangular or constant1)");
}

const char* surrogate_kind_name(SurrogateKind k) {
  switch (k) {
    case SurrogateKind::ArcTan: return "arctan";
    case SurrogateKind::Rectangular: return "rectangular";
    case SurrogateKind::Constant1: return "constant1";
  }
  return "?";
}

}  // namespace sew
