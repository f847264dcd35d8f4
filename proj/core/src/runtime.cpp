#include "trofi/runtime.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace trofi {

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
#endif
}

}  // namespace trofi
