#include "bevpred/btf.hpp"
#include "bevpred/rng.hpp"
#include "bevpred/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

using namespace bevpred;

namespace {

Tensor random_tensor(std::vector<std::size_t> dims, Rng& rng, Dtype dt = Dtype::F64) {
    Tensor t(std::move(dims), dt);
    for (std::size_t i = 0; i < t.numel(); ++i) {
        t[i] = rng.uniform(-1.0, 1.0);
    }
    return t;
}

} // namespace

TEST(Tensor, ShapeInvariants) {
    EXPECT_THROW(Tensor(std::vector<std::size_t>{}), std::invalid_argument);
    EXPECT_THROW(Tensor({3, 0, 2}), std::invalid_argument);
    const Tensor t({2, 3, 4});
    EXPECT_EQ(t.numel(), 24u);
    EXPECT_EQ(t.rank(), 3u);
}

TEST(Matmul, IdentityPassesThrough) {
    Rng rng(7);
    const Tensor a = random_tensor({3, 3}, rng);
    const Tensor out = matmul(Tensor::identity(3), a);
    for (std::size_t i = 0; i < 9; ++i) {
        EXPECT_DOUBLE_EQ(out[i], a[i]);
    }
}

TEST(Matmul, HandArithmetic) {
    const Tensor a = Tensor::from_values({2, 2}, {1, 2, 3, 4}, Dtype::F64);
    const Tensor b = Tensor::from_values({2, 1}, {5, 6}, Dtype::F64);
    const Tensor c = matmul(a, b);
    EXPECT_DOUBLE_EQ(c(0, 0), 17.0);
    EXPECT_DOUBLE_EQ(c(1, 0), 39.0);
}

TEST(Matmul, MatchesTripleLoopOracle) {
    Rng rng(11);
    const Tensor a = random_tensor({7, 5}, rng);
    const Tensor b = random_tensor({5, 3}, rng);
    const Tensor c = matmul(a, b);
    for (std::size_t i = 0; i < 7; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            double want = 0.0;
            for (std::size_t k = 0; k < 5; ++k) {
                want += a(i, k) * b(k, j);
            }
            EXPECT_NEAR(c(i, j), want, 1e-12);
        }
    }
}

TEST(Matmul, ShapeMismatchThrows) {
    EXPECT_THROW(matmul(Tensor({2, 3}), Tensor({2, 3})), std::invalid_argument);
}

TEST(Conv2d, IdentityKernel) {
    Rng rng(3);
    const Tensor x = random_tensor({1, 4, 4}, rng);
    Tensor w({1, 1, 1, 1}, Dtype::F64);
    w[0] = 1.0;
    const Tensor out = conv2d(x, w, Tensor(), 1, 0);
    ASSERT_EQ(out.dims(), x.dims());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        EXPECT_DOUBLE_EQ(out[i], x[i]);
    }
}

TEST(Conv2d, OnesKernelCountsOverlap) {
    const Tensor x = Tensor::full({1, 4, 4}, 1.0, Dtype::F64);
    const Tensor w = Tensor::full({1, 1, 3, 3}, 1.0, Dtype::F64);
    const Tensor out = conv2d(x, w, Tensor(), 1, 1);
    ASSERT_EQ(out.extent(1), 4u);
    EXPECT_DOUBLE_EQ(out(0, 1, 1), 9.0); // full overlap
    EXPECT_DOUBLE_EQ(out(0, 0, 0), 4.0); // corner
    EXPECT_DOUBLE_EQ(out(0, 0, 1), 6.0); // edge
}

TEST(Conv2d, KernelLargerThanPaddedInputThrows) {
    EXPECT_THROW(conv2d(Tensor({1, 2, 2}), Tensor({1, 1, 5, 5}), Tensor(), 1, 0),
                 std::invalid_argument);
}

TEST(Conv2d, ShapeLawHoldsAcrossConfigs) {
    Rng rng(5);
    for (std::size_t k : {1u, 2u, 3u, 4u}) {
        for (std::size_t stride : {1u, 2u, 3u}) {
            for (std::size_t pad : {0u, 1u, 2u}) {
                const std::size_t h = 9, w = 11;
                if (k > h + 2 * pad || k > w + 2 * pad) continue;
                const Tensor x = random_tensor({2, h, w}, rng);
                const Tensor ker = random_tensor({3, 2, k, k}, rng);
                const Tensor out = conv2d(x, ker, Tensor(), stride, pad);
                EXPECT_EQ(out.extent(0), 3u);
                EXPECT_EQ(out.extent(1), (h + 2 * pad - k) / stride + 1);
                EXPECT_EQ(out.extent(2), (w + 2 * pad - k) / stride + 1);
            }
        }
    }
}

TEST(Deconv2d, InvertsStride2ShapeReduction) {
    Rng rng(9);
    const Tensor x = random_tensor({2, 32, 32}, rng);
    const Tensor down_w = random_tensor({2, 2, 3, 3}, rng);
    const Tensor down = conv2d(x, down_w, Tensor(), 2, 1);
    EXPECT_EQ(down.extent(1), 16u);
    const Tensor up_w = random_tensor({2, 2, 2, 2}, rng);
    const Tensor up = deconv2d(down, up_w, Tensor(), 2, 0);
    EXPECT_EQ(up.extent(1), 32u);
    EXPECT_EQ(up.extent(2), 32u);
}

TEST(Deconv2d, MatchesScatterOracle) {
    Rng rng(13);
    const Tensor x = random_tensor({2, 3, 4}, rng);
    const Tensor w = random_tensor({2, 3, 2, 2}, rng);
    const Tensor out = deconv2d(x, w, Tensor(), 2, 0);
    // scatter oracle
    Tensor want({3, 6, 8}, Dtype::F64);
    for (std::size_t ci = 0; ci < 2; ++ci) {
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t j = 0; j < 4; ++j) {
                for (std::size_t a = 0; a < 2; ++a) {
                    for (std::size_t b = 0; b < 2; ++b) {
                        for (std::size_t co = 0; co < 3; ++co) {
                            want(co, i * 2 + a, j * 2 + b) += x(ci, i, j) * w(ci, co, a, b);
                        }
                    }
                }
            }
        }
    }
    for (std::size_t i = 0; i < want.numel(); ++i) {
        EXPECT_NEAR(out[i], want[i], 1e-12);
    }
}

TEST(Softmax, UniformOnZeros) {
    const Tensor x = Tensor::zeros({3}, Dtype::F64);
    const Tensor s = softmax(x, 0);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_NEAR(s[i], 1.0 / 3.0, 1e-15);
    }
}

TEST(Softmax, MatchesDirectFormulaAndSumsToOne) {
    Rng rng(17);
    const Tensor x = random_tensor({4, 6}, rng);
    const Tensor s = softmax(x, 1);
    for (std::size_t i = 0; i < 4; ++i) {
        double denom = 0.0;
        for (std::size_t j = 0; j < 6; ++j) {
            denom += std::exp(x(i, j));
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < 6; ++j) {
            EXPECT_NEAR(s(i, j), std::exp(x(i, j)) / denom, 1e-12);
            sum += s(i, j);
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(Softmax, MonotoneInLogits) {
    Rng rng(19);
    const Tensor x = random_tensor({8}, rng);
    const Tensor s = softmax(x, 0);
    for (std::size_t i = 0; i < 8; ++i) {
        for (std::size_t j = 0; j < 8; ++j) {
            if (x[i] < x[j]) {
                EXPECT_LT(s[i], s[j]);
            }
        }
    }
}

TEST(Layernorm, ConstantVectorMapsToBeta) {
    const Tensor x = Tensor::full({2, 5}, 3.25, Dtype::F64);
    const Tensor gamma = Tensor::full({5}, 1.0, Dtype::F64);
    Tensor beta({5}, Dtype::F64);
    const Tensor out = layernorm(x, gamma, beta);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        EXPECT_NEAR(out[i], 0.0, 1e-6);
    }
}

TEST(Layernorm, NormalizesMeanAndVariance) {
    Rng rng(23);
    const Tensor x = random_tensor({3, 16}, rng);
    const Tensor gamma = Tensor::full({16}, 1.0, Dtype::F64);
    Tensor beta({16}, Dtype::F64);
    const Tensor out = layernorm(x, gamma, beta, 1e-12);
    for (std::size_t r = 0; r < 3; ++r) {
        double mean = 0.0, var = 0.0;
        for (std::size_t i = 0; i < 16; ++i) mean += out(r, i);
        mean /= 16.0;
        for (std::size_t i = 0; i < 16; ++i) var += (out(r, i) - mean) * (out(r, i) - mean);
        var /= 16.0;
        EXPECT_NEAR(mean, 0.0, 1e-9);
        EXPECT_NEAR(var, 1.0, 1e-6);
    }
}

TEST(Gelu, KnownValues) {
    EXPECT_DOUBLE_EQ(gelu(0.0), 0.0);
    EXPECT_NEAR(gelu(1.0), 0.8413447460685429, 1e-12);
    EXPECT_NEAR(gelu(-1.0), -0.15865525393145707, 1e-12);
}

TEST(Bilinear, ExactGridPointReturnsPixelBitwise) {
    Rng rng(29);
    const Tensor f = random_tensor({5, 5, 3}, rng);
    const Sample s = bilinear_sample(f, 2.0, 3.0);
    EXPECT_TRUE(s.in_range);
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_EQ(s.value[c], f(2, 3, c));
    }
}

TEST(Bilinear, MidpointAveragesNeighbors) {
    Tensor f({1, 2, 1}, Dtype::F64);
    f(0, 0, 0) = 2.0;
    f(0, 1, 0) = 6.0;
    const Sample s = bilinear_sample(f, 0.0, 0.5);
    EXPECT_TRUE(s.in_range);
    EXPECT_DOUBLE_EQ(s.value[0], 4.0);
}

TEST(Bilinear, MatchesFourNeighborOracle) {
    Rng rng(31);
    const Tensor f = random_tensor({5, 5, 3}, rng);
    for (int trial = 0; trial < 50; ++trial) {
        const double row = rng.uniform(0.0, 4.0);
        const double col = rng.uniform(0.0, 4.0);
        const Sample s = bilinear_sample(f, row, col);
        EXPECT_TRUE(s.in_range);
        const std::size_t r0 = static_cast<std::size_t>(std::floor(row));
        const std::size_t c0 = static_cast<std::size_t>(std::floor(col));
        const double fr = row - std::floor(row), fc = col - std::floor(col);
        const std::size_t r1 = std::min<std::size_t>(r0 + 1, 4);
        const std::size_t c1 = std::min<std::size_t>(c0 + 1, 4);
        for (std::size_t c = 0; c < 3; ++c) {
            const double want = (1 - fr) * (1 - fc) * f(r0, c0, c) +
                                (1 - fr) * fc * f(r0, c1, c) + fr * (1 - fc) * f(r1, c0, c) +
                                fr * fc * f(r1, c1, c);
            EXPECT_NEAR(s.value[c], want, 1e-12);
        }
    }
}

TEST(Bilinear, FarOutsideIsZeroAndFlagged) {
    Rng rng(37);
    const Tensor f = random_tensor({4, 4, 2}, rng);
    const Sample s = bilinear_sample(f, 40.0, -17.0);
    EXPECT_FALSE(s.in_range);
    EXPECT_EQ(s.value[0], 0.0);
    EXPECT_EQ(s.value[1], 0.0);
}

TEST(Bilinear, ContinuousAcrossSupportBoundary) {
    // Perturbing the sample point by delta moves the value by at most
    // 2 * L * delta, including across the zero-padding skirt.
    Rng rng(41);
    const Tensor f = random_tensor({4, 4, 1}, rng);
    double l = 0.0;
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t c = 0; c < 4; ++c) {
            if (r + 1 < 4) l = std::max(l, std::abs(f(r, c, 0) - f(r + 1, c, 0)));
            if (c + 1 < 4) l = std::max(l, std::abs(f(r, c, 0) - f(r, c + 1, 0)));
            l = std::max(l, std::abs(f(r, c, 0))); // step down into the zero pad
        }
    }
    const double delta = 1e-4;
    for (int trial = 0; trial < 400; ++trial) {
        const double row = rng.uniform(-1.5, 4.5);
        const double col = rng.uniform(-1.5, 4.5);
        const double v0 = bilinear_sample(f, row, col).value[0];
        const double v1 = bilinear_sample(f, row + delta, col).value[0];
        const double v2 = bilinear_sample(f, row, col + delta).value[0];
        EXPECT_LE(std::abs(v1 - v0), 2.0 * l * delta + 1e-12);
        EXPECT_LE(std::abs(v2 - v0), 2.0 * l * delta + 1e-12);
    }
}

TEST(Ops, DeterministicBitIdenticalReruns) {
    Rng rng1(101), rng2(101);
    const Tensor a1 = random_tensor({6, 6}, rng1);
    const Tensor a2 = random_tensor({6, 6}, rng2);
    const Tensor m1 = matmul(a1, a1);
    const Tensor m2 = matmul(a2, a2);
    for (std::size_t i = 0; i < m1.numel(); ++i) {
        EXPECT_EQ(m1[i], m2[i]);
    }
}

TEST(Btf, EncodeDecodeRoundTripsBothDtypes) {
    Rng rng(43);
    for (Dtype dt : {Dtype::F32, Dtype::F64}) {
        Tensor t = random_tensor({3, 4, 2}, rng, dt);
        t.quantize();
        const auto bytes = encode_btf(t);
        // header: magic + rank + extents + dtype tag
        EXPECT_EQ(bytes[0], 0x42);
        EXPECT_EQ(bytes[1], 0x54);
        EXPECT_EQ(bytes[2], 0x46);
        EXPECT_EQ(bytes[3], 0x31);
        const Tensor back = decode_btf(bytes);
        EXPECT_EQ(back.dims(), t.dims());
        EXPECT_EQ(back.dtype(), t.dtype());
        for (std::size_t i = 0; i < t.numel(); ++i) {
            EXPECT_EQ(back[i], t[i]);
        }
        const auto bytes2 = encode_btf(back);
        EXPECT_EQ(bytes, bytes2); // write -> read -> write is byte identical
    }
}

TEST(Btf, FileRoundTrip) {
    Rng rng(47);
    const Tensor t = random_tensor({2, 5}, rng, Dtype::F64);
    const std::string path =
        (std::filesystem::temp_directory_path() / "bevpred_btf_test.btf").string();
    write_btf(path, t);
    const Tensor back = read_btf(path);
    for (std::size_t i = 0; i < t.numel(); ++i) {
        EXPECT_EQ(back[i], t[i]);
    }
    std::filesystem::remove(path);
}

TEST(Btf, RejectsCorruptStreams) {
    Rng rng(53);
    auto bytes = encode_btf(random_tensor({2, 2}, rng));
    bytes[0] = 'X';
    EXPECT_THROW(decode_btf(bytes), std::runtime_error);
    auto truncated = encode_btf(random_tensor({2, 2}, rng));
    truncated.pop_back();
    EXPECT_THROW(decode_btf(truncated), std::runtime_error);
}

TEST(ParallelFor, MatchesSerialExecution) {
    std::vector<double> serial(10000), parallel(10000);
    auto fill = [](std::vector<double>& v, std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            v[i] = std::sin(static_cast<double>(i)) * 0.5;
        }
    };
    fill(serial, 0, serial.size());
    parallel_for(parallel.size(),
                 [&](std::size_t b, std::size_t e) { fill(parallel, b, e); });
    EXPECT_EQ(serial, parallel);
}
