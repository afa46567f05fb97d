// SPDX-License-Identifier: Apache-2.0
#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace cmid {

/// Keeps large tensor buffers on the heap instead of fresh mmap pages. The
/// autodiff tape allocates and frees megabyte-sized buffers every update,
/// and glibc's defaults return them to the kernel each time.
inline void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

}  // namespace cmid
