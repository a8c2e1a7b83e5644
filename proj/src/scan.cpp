#include "shadowmamba/scan.hpp"

#include <algorithm>
#include <cstdlib>

namespace sm {

namespace {

// Keep BLAS single-threaded: results must not depend on scheduling, and the
// matrices here are small enough that threads would only add overhead.
const int kBlasEnv = [] {
  setenv("OPENBLAS_NUM_THREADS", "1", 0);
  return 0;
}();

bool is_reverse(Direction d) {
  return d == Direction::horizontal_reverse || d == Direction::vertical_reverse;
}

Direction forward_of(Direction d) {
  switch (d) {
    case Direction::horizontal_reverse:
      return Direction::horizontal;
    case Direction::vertical_reverse:
      return Direction::vertical;
    default:
      return d;
  }
}

void finish_order(ScanOrder& o, bool reversed) {
  if (reversed) std::reverse(o.perm.begin(), o.perm.end());
  o.inv.assign(o.perm.size(), 0);
  for (int64_t i = 0; i < (int64_t)o.perm.size(); ++i) o.inv[o.perm[i]] = i;
}

// Windows of the grid in direction-d traversal order.
std::vector<std::pair<int, int>> window_sequence(int rows, int cols,
                                                 Direction f) {
  std::vector<std::pair<int, int>> seq;
  seq.reserve((size_t)rows * cols);
  if (f == Direction::horizontal) {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) seq.emplace_back(r, c);
  } else {
    for (int c = 0; c < cols; ++c)
      for (int r = 0; r < rows; ++r) seq.emplace_back(r, c);
  }
  return seq;
}

void emit_window_pixels(std::vector<int64_t>& perm, int r, int c, int window,
                        int W, Direction f) {
  int i0 = r * window, j0 = c * window;
  if (f == Direction::horizontal) {
    for (int i = 0; i < window; ++i)
      for (int j = 0; j < window; ++j)
        perm.push_back((int64_t)(i0 + i) * W + (j0 + j));
  } else {
    for (int j = 0; j < window; ++j)
      for (int i = 0; i < window; ++i)
        perm.push_back((int64_t)(i0 + i) * W + (j0 + j));
  }
}

void check_window_dims(int H, int W, int window) {
  if (window < 1) throw UsageError("window size must be >= 1");
  if (H % window != 0 || W % window != 0)
    throw UsageError("H and W must be divisible by the window size");
}

}  // namespace

std::string to_string(Direction d) {
  switch (d) {
    case Direction::horizontal: return "horizontal";
    case Direction::vertical: return "vertical";
    case Direction::horizontal_reverse: return "horizontal_reverse";
    case Direction::vertical_reverse: return "vertical_reverse";
  }
  return "?";
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::local: return "local";
    case Strategy::cross: return "cross";
    case Strategy::boundary_region: return "boundary_region";
  }
  return "?";
}

Direction direction_from_string(const std::string& s) {
  for (Direction d : kAllDirections)
    if (to_string(d) == s) return d;
  throw UsageError("unknown direction: " + s);
}

Strategy strategy_from_string(const std::string& s) {
  for (Strategy v : {Strategy::local, Strategy::cross, Strategy::boundary_region})
    if (to_string(v) == s) return v;
  throw UsageError("unknown strategy: " + s);
}

WindowClassGrid classify_windows(const BinaryMask& mask, int window) {
  check_window_dims(mask.h, mask.w, window);
  WindowClassGrid grid;
  grid.rows = mask.h / window;
  grid.cols = mask.w / window;
  grid.window = window;
  grid.labels.resize((size_t)grid.rows * grid.cols);
  for (int r = 0; r < grid.rows; ++r)
    for (int c = 0; c < grid.cols; ++c) {
      bool any = false, all = true;
      for (int i = r * window; i < (r + 1) * window; ++i)
        for (int j = c * window; j < (c + 1) * window; ++j) {
          if (mask.at(i, j))
            any = true;
          else
            all = false;
        }
      grid.labels[(size_t)r * grid.cols + c] = all ? 2 : (any ? 1 : 0);
    }
  return grid;
}

WindowClassGrid classify_windows_region(const BinaryMask& any1,
                                        const BinaryMask& all1, int window) {
  if (any1.h != all1.h || any1.w != all1.w)
    throw UsageError("classify_windows_region: any1/all1 size mismatch");
  check_window_dims(any1.h, any1.w, window);
  WindowClassGrid grid;
  grid.rows = any1.h / window;
  grid.cols = any1.w / window;
  grid.window = window;
  grid.labels.resize((size_t)grid.rows * grid.cols);
  for (int r = 0; r < grid.rows; ++r)
    for (int c = 0; c < grid.cols; ++c) {
      bool any = false, all = true;
      for (int i = r * window; i < (r + 1) * window; ++i)
        for (int j = c * window; j < (c + 1) * window; ++j) {
          if (any1.at(i, j)) any = true;
          if (!all1.at(i, j)) all = false;
        }
      grid.labels[(size_t)r * grid.cols + c] = all ? 2 : (any ? 1 : 0);
    }
  return grid;
}

ScanOrder build_local_order(int H, int W, int window, Direction d) {
  check_window_dims(H, W, window);
  ScanOrder o;
  o.strategy = Strategy::local;
  o.direction = d;
  o.window = window;
  o.h = H;
  o.w = W;
  o.perm.reserve((size_t)H * W);
  Direction f = forward_of(d);
  for (auto [r, c] : window_sequence(H / window, W / window, f))
    emit_window_pixels(o.perm, r, c, window, W, f);
  finish_order(o, is_reverse(d));
  return o;
}

ScanOrder build_boundary_region_order(const WindowClassGrid& classes, int H,
                                      int W, int window, Direction d) {
  check_window_dims(H, W, window);
  if (classes.rows != H / window || classes.cols != W / window ||
      classes.window != window)
    throw UsageError("build_boundary_region_order: class grid inconsistent");
  ScanOrder o;
  o.strategy = Strategy::boundary_region;
  o.direction = d;
  o.window = window;
  o.h = H;
  o.w = W;
  o.perm.reserve((size_t)H * W);
  Direction f = forward_of(d);
  auto seq = window_sequence(classes.rows, classes.cols, f);
  // Stable three-way partition: same-label windows keep their relative order.
  for (uint8_t label = 0; label <= 2; ++label)
    for (auto [r, c] : seq)
      if (classes.at(r, c) == label)
        emit_window_pixels(o.perm, r, c, window, W, f);
  finish_order(o, is_reverse(d));
  return o;
}

ScanOrder build_cross_order(int H, int W, Direction d) {
  ScanOrder o;
  o.strategy = Strategy::cross;
  o.direction = d;
  o.window = 0;
  o.h = H;
  o.w = W;
  o.perm.reserve((size_t)H * W);
  if (forward_of(d) == Direction::horizontal) {
    for (int64_t p = 0; p < (int64_t)H * W; ++p) o.perm.push_back(p);
  } else {
    for (int j = 0; j < W; ++j)
      for (int i = 0; i < H; ++i) o.perm.push_back((int64_t)i * W + j);
  }
  finish_order(o, is_reverse(d));
  return o;
}

CategoryDistanceStats intra_category_distance_stats(
    const ScanOrder& order, const WindowClassGrid& classes) {
  if (order.window != classes.window || order.window < 1)
    throw UsageError("distance stats require a windowed order");
  if (order.h != classes.rows * classes.window ||
      order.w != classes.cols * classes.window)
    throw UsageError("distance stats: order/classes size mismatch");

  // A window's start is the earliest sequence position among its pixels.
  std::array<std::vector<int64_t>, 3> starts;
  int win = order.window;
  for (int r = 0; r < classes.rows; ++r)
    for (int c = 0; c < classes.cols; ++c) {
      int64_t s = INT64_MAX;
      for (int i = r * win; i < (r + 1) * win; ++i)
        for (int j = c * win; j < (c + 1) * win; ++j)
          s = std::min(s, order.inv[(int64_t)i * order.w + j]);
      starts[classes.at(r, c)].push_back(s);
    }

  CategoryDistanceStats stats;
  for (int cat = 0; cat < 3; ++cat) {
    auto& v = starts[cat];
    auto& e = stats.category[cat];
    e.windows = (int64_t)v.size();
    e.present = !v.empty();
    if (v.size() < 2) continue;
    std::sort(v.begin(), v.end());
    // Sum of pairwise distances over sorted values in one pass.
    long double total = 0;
    for (size_t i = 0; i < v.size(); ++i)
      total += (long double)v[i] * (2.0L * i - (long double)v.size() + 1.0L);
    int64_t pairs = (int64_t)v.size() * ((int64_t)v.size() - 1) / 2;
    e.mean = (double)(total / pairs);
    e.max = v.back() - v.front();
  }
  return stats;
}

IndexPtr reflect_pad_indices(int C, int H, int W, int H2, int W2) {
  if (H2 < H || W2 < W) throw UsageError("reflect_pad_indices: shrink");
  auto idx = std::make_shared<IndexVec>((size_t)C * H2 * W2);
  int64_t k = 0;
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < H2; ++i)
      for (int j = 0; j < W2; ++j)
        (*idx)[k++] = ((int64_t)c * H + reflect_index(i, H)) * W +
                      reflect_index(j, W);
  return idx;
}

IndexPtr crop_indices(int C, int H2, int W2, int H, int W) {
  if (H > H2 || W > W2) throw UsageError("crop_indices: grow");
  auto idx = std::make_shared<IndexVec>((size_t)C * H * W);
  int64_t k = 0;
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j)
        (*idx)[k++] = ((int64_t)c * H2 + i) * W2 + j;
  return idx;
}

}  // namespace sm
