#pragma once

// Reference values computed offline with mpmath at 50 significant digits
// for the cosine schedule with N = 200, tau = 0.008.
namespace oracle {

inline constexpr double kAlphaBar100 = 0.4938435904406377133165527;
inline constexpr double kAlphaBar1 = 0.9997450273636279696612711;
inline constexpr double kBeta1 = 0.000254972636372030338728871;
inline constexpr double kBeta100 = 0.01553455309611590622316456;
inline constexpr double kAlphaBar199 = 6.071799308549331309226923e-05;

// Posterior coefficients at n = 100.
inline constexpr double kCoefX0At100 = 0.02173744493755833375543225;
inline constexpr double kCoefXnAt100 = 0.9769265482207447531710419;
inline constexpr double kPosteriorStdAt100 = 0.1236745157044701660917862;

}  // namespace oracle
