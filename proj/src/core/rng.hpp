/*
 * Copyright 2026 The Karula Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef KARULA_CORE_RNG_HPP_
#define KARULA_CORE_RNG_HPP_

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace karula {

using Rng = std::mt19937_64;

// Named sub-streams of the master seed. Every random draw in the library
// comes from a generator seeded by derive_seed(master, stream, ids...), so a
// stage can be re-run in isolation and still see the same numbers.
enum class Stream : std::uint64_t {
  data = 1,
  reference = 2,
  participation = 3,
  batches = 4,
  cv = 5,
  ifca_init = 6,
  test = 7,
};

std::uint64_t splitmix64(std::uint64_t x);

std::uint64_t derive_seed(std::uint64_t master, Stream stream,
                          std::initializer_list<std::uint64_t> ids = {});

inline Rng make_rng(std::uint64_t master, Stream stream,
                    std::initializer_list<std::uint64_t> ids = {}) {
  return Rng(derive_seed(master, stream, ids));
}

/// 64-bit FNV-1a, used for configuration hashes.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace karula

#endif  // KARULA_CORE_RNG_HPP_
