#ifndef FFORMATION_LSTM_CORE_H
#define FFORMATION_LSTM_CORE_H

#include <math.h>
#include <stdint.h>
#include <string.h>

#define LSTM_MAX_HIDDEN 128

static inline float pow2_f(float n)
{
    int32_t bits = ((int32_t)n + 127) << 23;
    float out;
    memcpy(&out, &bits, sizeof out);
    return out;
}

static inline double pow2_d(double n)
{
    int64_t bits = ((int64_t)n + 1023) << 52;
    double out;
    memcpy(&out, &bits, sizeof out);
    return out;
}

/* float: degree 7 Taylor on |r| <= ln2/2, relative error below 1e-8 */
typedef float vfloat_t __attribute__((vector_size(64), aligned(4)));
typedef double vdouble_t __attribute__((vector_size(64), aligned(8)));

#define REAL float
#define VREAL vfloat_t
#define VLANES 16
#define OUTER_COLS 4
#define SUFFIX(name) name##_f
#define FLOOR floorf
#define POW2 pow2_f
#define EXP_LO (-87.0f)
#define EXP_HI (88.0f)
#define POLY(r) (1.0f + (r) * (1.0f + (r) * (0.5f + (r) * (1.6666667e-1f + (r) * (4.1666668e-2f \
                 + (r) * (8.3333338e-3f + (r) * (1.3888889e-3f + (r) * 1.9841270e-4f)))))))
#include "lstm_core_impl.h"
#undef REAL
#undef SUFFIX
#undef FLOOR
#undef POW2
#undef EXP_LO
#undef EXP_HI
#undef POLY
#undef VREAL
#undef VLANES
#undef OUTER_COLS

/* double: degree 13 Taylor, relative error below 1e-16 */
#define REAL double
#define VREAL vdouble_t
#define VLANES 8
#define OUTER_COLS 2
#define SUFFIX(name) name##_d
#define FLOOR floor
#define POW2 pow2_d
#define EXP_LO (-708.0)
#define EXP_HI (709.0)
#define POLY(r) (1.0 + (r) * (1.0 + (r) * (1.0 / 2 + (r) * (1.0 / 6 + (r) * (1.0 / 24 + (r) * (1.0 / 120 \
                 + (r) * (1.0 / 720 + (r) * (1.0 / 5040 + (r) * (1.0 / 40320 + (r) * (1.0 / 362880 \
                 + (r) * (1.0 / 3628800 + (r) * (1.0 / 39916800 + (r) * (1.0 / 479001600 \
                 + (r) * (1.0 / 6227020800.0))))))))))))))
#include "lstm_core_impl.h"
#undef REAL
#undef SUFFIX
#undef FLOOR
#undef POW2
#undef EXP_LO
#undef EXP_HI
#undef POLY
#undef VREAL
#undef VLANES
#undef OUTER_COLS

#endif
