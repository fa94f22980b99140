#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace bevpred {

/// On-disk precision tag. Values are held as f64 in memory; F32 tensors are
/// quantized to float on serialization and on load.
enum class Dtype : std::uint8_t { F32 = 0, F64 = 1 };

/// Dense N-dimensional array, contiguous row-major (C order).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> dims, Dtype dtype = Dtype::F32);

    static Tensor zeros(std::vector<std::size_t> dims, Dtype dtype = Dtype::F32);
    static Tensor full(std::vector<std::size_t> dims, double value, Dtype dtype = Dtype::F32);
    static Tensor from_values(std::vector<std::size_t> dims, std::vector<double> values,
                              Dtype dtype = Dtype::F32);
    static Tensor identity(std::size_t n, Dtype dtype = Dtype::F64);

    std::size_t rank() const { return dims_.size(); }
    const std::vector<std::size_t>& dims() const { return dims_; }
    std::size_t extent(std::size_t axis) const { return dims_[axis]; }
    std::size_t numel() const { return data_.size(); }
    Dtype dtype() const { return dtype_; }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t flat) { return data_[flat]; }
    double operator[](std::size_t flat) const { return data_[flat]; }

    double& operator()(std::size_t i) { return data_[i]; }
    double operator()(std::size_t i) const { return data_[i]; }
    double& operator()(std::size_t i, std::size_t j) { return data_[i * dims_[1] + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * dims_[1] + j]; }
    double& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * dims_[1] + j) * dims_[2] + k];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * dims_[1] + j) * dims_[2] + k];
    }
    double& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        return data_[((i * dims_[1] + j) * dims_[2] + k) * dims_[3] + l];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return data_[((i * dims_[1] + j) * dims_[2] + k) * dims_[3] + l];
    }

    /// Quantize in-memory values to the dtype's storage precision.
    void quantize();

    bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }
    std::string shape_string() const;

private:
    std::vector<std::size_t> dims_;
    std::vector<double> data_;
    Dtype dtype_ = Dtype::F32;
};

// ---- numeric primitives ----

/// [m x k] . [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);

/// x: [C_in x H x W], w: [C_out x C_in x kh x kw], bias: [C_out] (may be empty).
/// Cross-correlation, H' = floor((H + 2*pad - kh)/stride) + 1.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t pad);

/// Transposed convolution. x: [C_in x H x W], w: [C_in x C_out x kh x kw],
/// H' = (H - 1)*stride - 2*pad + kh.
Tensor deconv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
                std::size_t pad);

Tensor softmax(const Tensor& x, std::size_t axis);

/// Normalizes the last axis to mean 0 / variance 1, then applies gamma/beta.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// x: [... x C_in], w: [C_out x C_in], bias: [C_out] (may be empty) -> [... x C_out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

double gelu(double x);
Tensor gelu(const Tensor& x);

/// Result of sampling a [H x W x C] map at a continuous (row, col) point.
/// Out-of-support neighbors are treated as zero-valued pixels so the map is
/// continuous everywhere; `in_range` is false once the point leaves
/// [0, H-1] x [0, W-1].
struct Sample {
    std::vector<double> value;
    bool in_range = false;
};

Sample bilinear_sample(const Tensor& f, double row, double col);

// ---- optional data parallelism ----

/// Splits [0, n) into contiguous chunks and runs fn(begin, end) on worker
/// threads. Output must be written to disjoint locations; results are
/// identical for any thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

void set_max_threads(unsigned n);
unsigned max_threads();

} // namespace bevpred
