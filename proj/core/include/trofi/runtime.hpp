#pragma once

namespace trofi {

/// Keeps freed training buffers in the heap instead of returning them to the
/// OS after every update. A no-op outside glibc. Call once from main().
void tune_allocator();

}  // namespace trofi
