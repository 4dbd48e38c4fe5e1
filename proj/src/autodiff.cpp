#include "pf/autodiff.hpp"

namespace pf {
template class Graph<float>;
template class Graph<double>;
}  // namespace pf
