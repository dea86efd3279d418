#include <cmath>

#include "cola/tensor.hpp"
#include "doctest.h"

using namespace cola;

TEST_CASE("tensor construction and accessors") {
    Tensor<float> t = Tensor<float>::zeros({2, 3});
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK(t.numel() == 6);
    t.at(1, 2) = 4.5f;
    CHECK(t.at(1, 2) == 4.5f);

    Tensor<double> f = Tensor<double>::full({2, 2}, 3.0);
    for (double v : f.data) CHECK(v == 3.0);

    CHECK_THROWS_AS(Tensor<float>::zeros({2, 0}), shape_error);
    CHECK_THROWS_AS(Tensor<float>::zeros({-1}), shape_error);
}

TEST_CASE("matmul against hand example") {
    // [[1,2],[3,4]] x [[5,6],[7,8]] = [[19,22],[43,50]]
    Tensor<double> a({2, 2});
    a.data = {1, 2, 3, 4};
    Tensor<double> b({2, 2});
    b.data = {5, 6, 7, 8};
    Tensor<double> c = Tensor<double>::zeros({2, 2});
    matmul_acc(a, b, c);
    CHECK(c.at(0, 0) == doctest::Approx(19));
    CHECK(c.at(0, 1) == doctest::Approx(22));
    CHECK(c.at(1, 0) == doctest::Approx(43));
    CHECK(c.at(1, 1) == doctest::Approx(50));

    Tensor<double> bad = Tensor<double>::zeros({3, 2});
    Tensor<double> out = Tensor<double>::zeros({2, 2});
    CHECK_THROWS_AS(matmul_acc(a, bad, out), shape_error);
}

TEST_CASE("transposed matmul variants agree with explicit transpose") {
    Tensor<double> a({2, 3});
    a.data = {1, -2, 3, 0.5, 4, -1};
    Tensor<double> b({2, 3});
    b.data = {2, 1, 0, -1, 3, 5};

    // a . b^T
    Tensor<double> nt = Tensor<double>::zeros({2, 2});
    matmul_nt_acc(a, b, nt);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            double ref = 0;
            for (int k = 0; k < 3; ++k) ref += a.at(i, k) * b.at(j, k);
            CHECK(nt.at(i, j) == doctest::Approx(ref));
        }

    // a^T . b
    Tensor<double> tn = Tensor<double>::zeros({3, 3});
    matmul_tn_acc(a, b, tn);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double ref = 0;
            for (int k = 0; k < 2; ++k) ref += a.at(k, i) * b.at(k, j);
            CHECK(tn.at(i, j) == doctest::Approx(ref));
        }
}

TEST_CASE("cast and finiteness") {
    Tensor<float> t({1, 2});
    t.data = {1.5f, -2.0f};
    auto d = t.cast<double>();
    CHECK(d.at(0, 1) == -2.0);
    CHECK(t.all_finite());
    t.data[0] = std::nanf("");
    CHECK_FALSE(t.all_finite());
}
