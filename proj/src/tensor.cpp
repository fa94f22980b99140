#include "bevpred/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace bevpred {

namespace {

std::size_t checked_numel(const std::vector<std::size_t>& dims) {
    if (dims.empty()) {
        throw std::invalid_argument("tensor rank must be >= 1");
    }
    std::size_t n = 1;
    for (std::size_t d : dims) {
        if (d == 0) {
            throw std::invalid_argument("tensor extents must be >= 1");
        }
        n *= d;
    }
    return n;
}

} // namespace

Tensor::Tensor(std::vector<std::size_t> dims, Dtype dtype)
    : dims_(std::move(dims)), data_(checked_numel(dims_), 0.0), dtype_(dtype) {}

Tensor Tensor::zeros(std::vector<std::size_t> dims, Dtype dtype) {
    return Tensor(std::move(dims), dtype);
}

Tensor Tensor::full(std::vector<std::size_t> dims, double value, Dtype dtype) {
    Tensor t(std::move(dims), dtype);
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
}

Tensor Tensor::from_values(std::vector<std::size_t> dims, std::vector<double> values, Dtype dtype) {
    Tensor t;
    t.dims_ = std::move(dims);
    if (checked_numel(t.dims_) != values.size()) {
        throw std::invalid_argument("from_values: element count does not match shape");
    }
    t.data_ = std::move(values);
    t.dtype_ = dtype;
    return t;
}

Tensor Tensor::identity(std::size_t n, Dtype dtype) {
    Tensor t({n, n}, dtype);
    for (std::size_t i = 0; i < n; ++i) {
        t(i, i) = 1.0;
    }
    return t;
}

void Tensor::quantize() {
    if (dtype_ == Dtype::F32) {
        for (double& v : data_) {
            v = static_cast<double>(static_cast<float>(v));
        }
    }
}

std::string Tensor::shape_string() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < dims_.size(); ++i) {
        os << (i ? "x" : "") << dims_[i];
    }
    os << "]";
    return os.str();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw std::invalid_argument("matmul expects rank-2 tensors");
    }
    if (a.extent(1) != b.extent(0)) {
        throw std::invalid_argument("matmul inner extents mismatch: " + a.shape_string() + " . " +
                                    b.shape_string());
    }
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    Tensor out({m, n}, a.dtype());
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                acc += a(i, p) * b(p, j);
            }
            out(i, j) = acc;
        }
    }
    return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t pad) {
    if (x.rank() != 3 || w.rank() != 4) {
        throw std::invalid_argument("conv2d expects x[Cin x H x W], w[Cout x Cin x kh x kw]");
    }
    if (stride == 0) {
        throw std::invalid_argument("conv2d stride must be >= 1");
    }
    const std::size_t c_in = x.extent(0), h = x.extent(1), wd = x.extent(2);
    const std::size_t c_out = w.extent(0), kh = w.extent(2), kw = w.extent(3);
    if (w.extent(1) != c_in) {
        throw std::invalid_argument("conv2d channel mismatch");
    }
    if (kh > h + 2 * pad || kw > wd + 2 * pad) {
        throw std::invalid_argument("conv2d kernel larger than padded input");
    }
    if (!bias.empty() && (bias.rank() != 1 || bias.extent(0) != c_out)) {
        throw std::invalid_argument("conv2d bias shape mismatch");
    }
    const std::size_t h_out = (h + 2 * pad - kh) / stride + 1;
    const std::size_t w_out = (wd + 2 * pad - kw) / stride + 1;
    Tensor out({c_out, h_out, w_out}, x.dtype());
    const long ipad = static_cast<long>(pad);
    for (std::size_t co = 0; co < c_out; ++co) {
        const double b = bias.empty() ? 0.0 : bias(co);
        for (std::size_t i = 0; i < h_out; ++i) {
            for (std::size_t j = 0; j < w_out; ++j) {
                double acc = b;
                for (std::size_t ci = 0; ci < c_in; ++ci) {
                    for (std::size_t a = 0; a < kh; ++a) {
                        const long r = static_cast<long>(i * stride + a) - ipad;
                        if (r < 0 || r >= static_cast<long>(h)) continue;
                        for (std::size_t bcol = 0; bcol < kw; ++bcol) {
                            const long c = static_cast<long>(j * stride + bcol) - ipad;
                            if (c < 0 || c >= static_cast<long>(wd)) continue;
                            acc += x(ci, static_cast<std::size_t>(r), static_cast<std::size_t>(c)) *
                                   w(co, ci, a, bcol);
                        }
                    }
                }
                out(co, i, j) = acc;
            }
        }
    }
    return out;
}

Tensor deconv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
                std::size_t pad) {
    if (x.rank() != 3 || w.rank() != 4) {
        throw std::invalid_argument("deconv2d expects x[Cin x H x W], w[Cin x Cout x kh x kw]");
    }
    if (stride == 0) {
        throw std::invalid_argument("deconv2d stride must be >= 1");
    }
    const std::size_t c_in = x.extent(0), h = x.extent(1), wd = x.extent(2);
    const std::size_t c_out = w.extent(1), kh = w.extent(2), kw = w.extent(3);
    if (w.extent(0) != c_in) {
        throw std::invalid_argument("deconv2d channel mismatch");
    }
    const long h_out_l = static_cast<long>((h - 1) * stride + kh) - 2 * static_cast<long>(pad);
    const long w_out_l = static_cast<long>((wd - 1) * stride + kw) - 2 * static_cast<long>(pad);
    if (h_out_l <= 0 || w_out_l <= 0) {
        throw std::invalid_argument("deconv2d output would be empty");
    }
    const std::size_t h_out = static_cast<std::size_t>(h_out_l);
    const std::size_t w_out = static_cast<std::size_t>(w_out_l);
    if (!bias.empty() && (bias.rank() != 1 || bias.extent(0) != c_out)) {
        throw std::invalid_argument("deconv2d bias shape mismatch");
    }
    Tensor out({c_out, h_out, w_out}, x.dtype());
    if (!bias.empty()) {
        for (std::size_t co = 0; co < c_out; ++co) {
            for (std::size_t i = 0; i < h_out; ++i) {
                for (std::size_t j = 0; j < w_out; ++j) {
                    out(co, i, j) = bias(co);
                }
            }
        }
    }
    const long ipad = static_cast<long>(pad);
    for (std::size_t ci = 0; ci < c_in; ++ci) {
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < wd; ++j) {
                const double v = x(ci, i, j);
                for (std::size_t a = 0; a < kh; ++a) {
                    const long r = static_cast<long>(i * stride + a) - ipad;
                    if (r < 0 || r >= static_cast<long>(h_out)) continue;
                    for (std::size_t bcol = 0; bcol < kw; ++bcol) {
                        const long c = static_cast<long>(j * stride + bcol) - ipad;
                        if (c < 0 || c >= static_cast<long>(w_out)) continue;
                        for (std::size_t co = 0; co < c_out; ++co) {
                            out(co, static_cast<std::size_t>(r), static_cast<std::size_t>(c)) +=
                                v * w(ci, co, a, bcol);
                        }
                    }
                }
            }
        }
    }
    return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank()) {
        throw std::invalid_argument("softmax axis out of range");
    }
    const std::size_t n = x.extent(axis);
    std::size_t inner = 1;
    for (std::size_t a = axis + 1; a < x.rank(); ++a) inner *= x.extent(a);
    std::size_t outer = x.numel() / (n * inner);

    Tensor out(x.dims(), x.dtype());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < n; ++i) {
                mx = std::max(mx, x[base + i * inner]);
            }
            double sum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double e = std::exp(x[base + i * inner] - mx);
                out[base + i * inner] = e;
                sum += e;
            }
            for (std::size_t i = 0; i < n; ++i) {
                out[base + i * inner] /= sum;
            }
        }
    }
    return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const std::size_t c = x.extent(x.rank() - 1);
    if (c == 0) {
        throw std::invalid_argument("layernorm: zero-length axis");
    }
    if (gamma.numel() != c || beta.numel() != c) {
        throw std::invalid_argument("layernorm affine shape mismatch");
    }
    Tensor out(x.dims(), x.dtype());
    const std::size_t rows = x.numel() / c;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* px = x.data() + r * c;
        double* po = out.data() + r * c;
        double mean = 0.0;
        for (std::size_t i = 0; i < c; ++i) mean += px[i];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t i = 0; i < c; ++i) {
            const double d = px[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(c);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t i = 0; i < c; ++i) {
            po[i] = (px[i] - mean) * inv * gamma[i] + beta[i];
        }
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    if (w.rank() != 2) {
        throw std::invalid_argument("linear expects w[Cout x Cin]");
    }
    const std::size_t c_in = x.extent(x.rank() - 1);
    const std::size_t c_out = w.extent(0);
    if (w.extent(1) != c_in) {
        throw std::invalid_argument("linear input channel mismatch");
    }
    if (!bias.empty() && bias.numel() != c_out) {
        throw std::invalid_argument("linear bias shape mismatch");
    }
    std::vector<std::size_t> odims = x.dims();
    odims.back() = c_out;
    Tensor out(odims, x.dtype());
    const std::size_t rows = x.numel() / c_in;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* px = x.data() + r * c_in;
        double* po = out.data() + r * c_out;
        for (std::size_t o = 0; o < c_out; ++o) {
            double acc = bias.empty() ? 0.0 : bias[o];
            const double* pw = w.data() + o * c_in;
            for (std::size_t i = 0; i < c_in; ++i) {
                acc += pw[i] * px[i];
            }
            po[o] = acc;
        }
    }
    return out;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

Tensor gelu(const Tensor& x) {
    Tensor out(x.dims(), x.dtype());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        out[i] = gelu(x[i]);
    }
    return out;
}

Sample bilinear_sample(const Tensor& f, double row, double col) {
    if (f.rank() != 3) {
        throw std::invalid_argument("bilinear_sample expects [H x W x C]");
    }
    const std::size_t h = f.extent(0), w = f.extent(1), c = f.extent(2);
    Sample s;
    s.value.assign(c, 0.0);
    s.in_range = row >= 0.0 && row <= static_cast<double>(h - 1) && col >= 0.0 &&
                 col <= static_cast<double>(w - 1);

    const double r0d = std::floor(row);
    const double c0d = std::floor(col);
    const double fr = row - r0d;
    const double fc = col - c0d;

    // Exact grid point inside the map: return the pixel bitwise.
    if (s.in_range && fr == 0.0 && fc == 0.0) {
        const std::size_t r = static_cast<std::size_t>(r0d);
        const std::size_t cc = static_cast<std::size_t>(c0d);
        for (std::size_t k = 0; k < c; ++k) {
            s.value[k] = f(r, cc, k);
        }
        return s;
    }

    const long r0 = static_cast<long>(r0d);
    const long c0 = static_cast<long>(c0d);
    if (r0 < -1 || r0 >= static_cast<long>(h) || c0 < -1 || c0 >= static_cast<long>(w)) {
        return s; // all four neighbors are outside: exact zeros
    }
    const double wts[4] = {(1.0 - fr) * (1.0 - fc), (1.0 - fr) * fc, fr * (1.0 - fc), fr * fc};
    const long rows[4] = {r0, r0, r0 + 1, r0 + 1};
    const long cols[4] = {c0, c0 + 1, c0, c0 + 1};
    for (int q = 0; q < 4; ++q) {
        if (wts[q] == 0.0) continue;
        const long r = rows[q], cc = cols[q];
        if (r < 0 || r >= static_cast<long>(h) || cc < 0 || cc >= static_cast<long>(w)) continue;
        const double* pix =
            f.data() + (static_cast<std::size_t>(r) * w + static_cast<std::size_t>(cc)) * c;
        for (std::size_t k = 0; k < c; ++k) {
            s.value[k] += wts[q] * pix[k];
        }
    }
    return s;
}

namespace {
std::atomic<unsigned> g_max_threads{0}; // 0 = hardware default
}

void set_max_threads(unsigned n) { g_max_threads.store(n); }

unsigned max_threads() {
    unsigned n = g_max_threads.load();
    if (n == 0) {
        n = std::thread::hardware_concurrency();
        if (n == 0) n = 1;
    }
    return n;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
    const unsigned workers = std::min<std::size_t>(max_threads(), n);
    if (workers <= 1 || n < 256) {
        fn(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (unsigned t = 0; t < workers; ++t) {
        const std::size_t begin = t * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    for (auto& th : pool) {
        th.join();
    }
}

} // namespace bevpred
