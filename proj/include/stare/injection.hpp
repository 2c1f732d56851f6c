#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

namespace stare {

// Linguistic properties whose probe directions can be injected.
enum class Property { POS, DEPS, PT };

std::string_view to_string(Property property) noexcept;
// Accepts POS, DEPS, PT (case-insensitive); throws InvalidArgument.
Property parse_property(std::string_view name);

// Additive intervention h' = h + lambda * u applied to every token row of
// the residual stream right after encoder layer `layer` (1-based).
struct InjectionDirection {
  std::vector<double> u;  // unit length
  Property property = Property::POS;
  std::size_t layer = 1;
  double lambda = 0.0;

  bool operator==(const InjectionDirection&) const = default;
};

}  // namespace stare
