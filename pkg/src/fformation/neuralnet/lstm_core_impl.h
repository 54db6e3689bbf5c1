/*
 * Type-generic LSTM recurrence, included once per element type.
 *
 * The including file defines REAL (float or double), SUFFIX(name), and the
 * constants EXP_LO, EXP_HI. Gate order along the 4H axis: input, forget,
 * cell candidate, output.
 */

#pragma omp declare simd
static inline REAL SUFFIX(fast_exp)(REAL x)
{
    /* 2^n * p(r), r = x - n ln2, |r| <= ln2 / 2. Branch free so loops vectorize. */
    x = x < EXP_LO ? EXP_LO : x;
    x = x > EXP_HI ? EXP_HI : x;
    REAL n = FLOOR(x * (REAL)1.4426950408889634 + (REAL)0.5);
    REAL r = x - n * (REAL)0.693145751953125;
    r = r - n * (REAL)1.428606820309417232e-06;
    REAL p = POLY(r);
    return p * POW2(n);
}

#pragma omp declare simd
static inline REAL SUFFIX(sigmoid)(REAL x)
{
    return (REAL)1 / ((REAL)1 + SUFFIX(fast_exp)(-x));
}

#pragma omp declare simd
static inline REAL SUFFIX(tanh_)(REAL x)
{
    return (REAL)2 / ((REAL)1 + SUFFIX(fast_exp)((REAL)-2 * x)) - (REAL)1;
}

/*
 * Forward recurrence for B sequences of length T from zero state.
 * xproj (B,T,G) holds x W^T + b; UT (H,G) is the transposed recurrent matrix.
 * Outputs gates (B,T,G), cell (B,T,H), tcell = tanh(cell) (B,T,H), hidden (B,T,H).
 */
static inline __attribute__((always_inline)) void
SUFFIX(lstm_forward_body)(const REAL *restrict xproj, const REAL *restrict UT,
                          REAL *restrict gates, REAL *restrict cell,
                          REAL *restrict tcell, REAL *restrict hidden,
                          long B, long T, const long H)
{
    const long G = 4 * H;
    REAL z[4 * LSTM_MAX_HIDDEN];
    REAL hprev[LSTM_MAX_HIDDEN];
    REAL cprev[LSTM_MAX_HIDDEN];

    for (long b = 0; b < B; ++b) {
        for (long j = 0; j < H; ++j) {
            hprev[j] = 0;
            cprev[j] = 0;
        }
        for (long t = 0; t < T; ++t) {
            const long row = b * T + t;
            const REAL *xp = xproj + row * G;
            REAL *gt = gates + row * G;
            #pragma omp simd
            for (long k = 0; k < G; ++k)
                z[k] = xp[k];
            for (long j = 0; j < H; ++j) {
                const REAL hj = hprev[j];
                const REAL *u = UT + j * G;
                #pragma omp simd
                for (long k = 0; k < G; ++k)
                    z[k] += u[k] * hj;
            }
            #pragma omp simd
            for (long k = 0; k < 2 * H; ++k)
                gt[k] = SUFFIX(sigmoid)(z[k]);
            #pragma omp simd
            for (long k = 2 * H; k < 3 * H; ++k)
                gt[k] = SUFFIX(tanh_)(z[k]);
            #pragma omp simd
            for (long k = 3 * H; k < G; ++k)
                gt[k] = SUFFIX(sigmoid)(z[k]);
            REAL *ct = cell + row * H;
            REAL *tt = tcell + row * H;
            REAL *ht = hidden + row * H;
            #pragma omp simd
            for (long j = 0; j < H; ++j) {
                const REAL c = gt[H + j] * cprev[j] + gt[j] * gt[2 * H + j];
                ct[j] = c;
                cprev[j] = c;
            }
            #pragma omp simd
            for (long j = 0; j < H; ++j) {
                const REAL tc = SUFFIX(tanh_)(ct[j]);
                tt[j] = tc;
                ht[j] = gt[3 * H + j] * tc;
                hprev[j] = ht[j];
            }
        }
    }
}

static void SUFFIX(lstm_forward)(const REAL *restrict xproj, const REAL *restrict UT,
                                 REAL *restrict gates, REAL *restrict cell,
                                 REAL *restrict tcell, REAL *restrict hidden,
                                 long B, long T, long H)
{
    /* the default width gets a copy with H known at compile time */
    if (H == 16)
        SUFFIX(lstm_forward_body)(xproj, UT, gates, cell, tcell, hidden, B, T, 16);
    else
        SUFFIX(lstm_forward_body)(xproj, UT, gates, cell, tcell, hidden, B, T, H);
}

/*
 * Backpropagation through time. dhidden (B,T,H) is the loss gradient reaching
 * each hidden output from above. Writes dz (B,T,G), the gradient w.r.t. gate
 * pre-activations. Weight gradients are sums of outer products of dz with the
 * layer inputs and are left to the caller as matrix products.
 */
static inline __attribute__((always_inline)) void
SUFFIX(lstm_backward_body)(const REAL *restrict dhidden, const REAL *restrict gates,
                           const REAL *restrict cell, const REAL *restrict tcell,
                           const REAL *restrict U, REAL *restrict dz,
                           long B, long T, const long H)
{
    const long G = 4 * H;
    REAL dhnext[LSTM_MAX_HIDDEN];
    REAL dcnext[LSTM_MAX_HIDDEN];
    REAL acc[4][LSTM_MAX_HIDDEN];

    for (long b = 0; b < B; ++b) {
        for (long j = 0; j < H; ++j) {
            dhnext[j] = 0;
            dcnext[j] = 0;
        }
        for (long t = T - 1; t >= 0; --t) {
            const long row = b * T + t;
            const REAL *gt = gates + row * G;
            const REAL *tt = tcell + row * H;
            const REAL *dh_in = dhidden + row * H;
            REAL *dzt = dz + row * G;
            #pragma omp simd
            for (long j = 0; j < H; ++j) {
                const REAL ig = gt[j], fg = gt[H + j], gg = gt[2 * H + j], og = gt[3 * H + j];
                const REAL tc = tt[j];
                const REAL cp = t > 0 ? cell[row * H - H + j] : (REAL)0;
                const REAL dh = dh_in[j] + dhnext[j];
                const REAL dc = dh * og * ((REAL)1 - tc * tc) + dcnext[j];
                dzt[j] = dc * gg * ig * ((REAL)1 - ig);
                dzt[H + j] = dc * cp * fg * ((REAL)1 - fg);
                dzt[2 * H + j] = dc * ig * ((REAL)1 - gg * gg);
                dzt[3 * H + j] = dh * tc * og * ((REAL)1 - og);
                dcnext[j] = dc * fg;
            }
            /* one accumulator per gate block keeps the FMA chains short */
            for (long j = 0; j < H; ++j) {
                acc[0][j] = 0;
                acc[1][j] = 0;
                acc[2][j] = 0;
                acc[3][j] = 0;
            }
            for (long m = 0; m < H; ++m) {
                const REAL d0 = dzt[m], d1 = dzt[H + m], d2 = dzt[2 * H + m], d3 = dzt[3 * H + m];
                const REAL *u0 = U + m * H;
                const REAL *u1 = U + (H + m) * H;
                const REAL *u2 = U + (2 * H + m) * H;
                const REAL *u3 = U + (3 * H + m) * H;
                #pragma omp simd
                for (long j = 0; j < H; ++j) {
                    acc[0][j] += u0[j] * d0;
                    acc[1][j] += u1[j] * d1;
                    acc[2][j] += u2[j] * d2;
                    acc[3][j] += u3[j] * d3;
                }
            }
            #pragma omp simd
            for (long j = 0; j < H; ++j)
                dhnext[j] = (acc[0][j] + acc[1][j]) + (acc[2][j] + acc[3][j]);
        }
    }
}

static void SUFFIX(lstm_backward)(const REAL *restrict dhidden, const REAL *restrict gates,
                                  const REAL *restrict cell, const REAL *restrict tcell,
                                  const REAL *restrict U, REAL *restrict dz,
                                  long B, long T, long H)
{
    if (H == 16)
        SUFFIX(lstm_backward_body)(dhidden, gates, cell, tcell, U, dz, B, T, 16);
    else
        SUFFIX(lstm_backward_body)(dhidden, gates, cell, tcell, U, dz, B, T, H);
}

/*
 * Weight gradients of one layer, accumulated into dW (G,C), dU (G,H), db (G):
 * dW += sum_t dz_t x_t^T, dU += sum_{t>0} dz_t h_{t-1}^T, db += sum_t dz_t.
 * Works per sequence over four input columns at a time so the partial sums
 * stay in registers while dz streams from cache.
 */
static inline __attribute__((always_inline)) void
SUFFIX(outer_accumulate)(const REAL *restrict dz, const REAL *restrict x, REAL *restrict out,
                         long T, long C, const long G)
{
    long j0 = 0;
    if (G == 64) {
        /* 64 gates = NV vectors per column; OUTER_COLS columns fill the register file */
        enum { NV = 64 / VLANES };
        for (; j0 + OUTER_COLS <= C; j0 += OUTER_COLS) {
            VREAL acc[OUTER_COLS][NV];
            for (int q = 0; q < OUTER_COLS; ++q)
                for (int v = 0; v < NV; ++v)
                    acc[q][v] = (VREAL){0};
            for (long t = 0; t < T; ++t) {
                /* the vector type is declared 4/8-byte aligned, so these are plain unaligned loads */
                const VREAL *d = (const VREAL *)(dz + t * 64);
                for (int q = 0; q < OUTER_COLS; ++q) {
                    const REAL xq = x[t * C + j0 + q];
                    for (int v = 0; v < NV; ++v)
                        acc[q][v] += d[v] * xq;
                }
            }
            for (int q = 0; q < OUTER_COLS; ++q)
                for (int v = 0; v < NV; ++v)
                    for (int l = 0; l < VLANES; ++l)
                        out[(v * VLANES + l) * C + j0 + q] += acc[q][v][l];
        }
    }
    for (; j0 < C; ++j0) {
        REAL a0[4 * LSTM_MAX_HIDDEN];
        #pragma omp simd
        for (long k = 0; k < G; ++k)
            a0[k] = 0;
        for (long t = 0; t < T; ++t) {
            const REAL *d = dz + t * G;
            const REAL x0 = x[t * C + j0];
            #pragma omp simd
            for (long k = 0; k < G; ++k)
                a0[k] += d[k] * x0;
        }
        for (long k = 0; k < G; ++k)
            out[k * C + j0] += a0[k];
    }
}

static inline __attribute__((always_inline)) void
SUFFIX(lstm_weight_grads_body)(const REAL *restrict dz, const REAL *restrict inp,
                               const REAL *restrict hidden, REAL *restrict dW,
                               REAL *restrict dU, REAL *restrict db,
                               long B, long T, long C, const long H)
{
    const long G = 4 * H;
    for (long b = 0; b < B; ++b) {
        const REAL *dzb = dz + b * T * G;
        SUFFIX(outer_accumulate)(dzb, inp + b * T * C, dW, T, C, G);
        if (T > 1)
            SUFFIX(outer_accumulate)(dzb + G, hidden + b * T * H, dU, T - 1, H, G);
        REAL s[4 * LSTM_MAX_HIDDEN];
        #pragma omp simd
        for (long k = 0; k < G; ++k)
            s[k] = 0;
        for (long t = 0; t < T; ++t) {
            #pragma omp simd
            for (long k = 0; k < G; ++k)
                s[k] += dzb[t * G + k];
        }
        #pragma omp simd
        for (long k = 0; k < G; ++k)
            db[k] += s[k];
    }
}

static void SUFFIX(lstm_weight_grads)(const REAL *restrict dz, const REAL *restrict inp,
                                      const REAL *restrict hidden, REAL *restrict dW,
                                      REAL *restrict dU, REAL *restrict db,
                                      long B, long T, long C, long H)
{
    if (H == 16)
        SUFFIX(lstm_weight_grads_body)(dz, inp, hidden, dW, dU, db, B, T, C, 16);
    else
        SUFFIX(lstm_weight_grads_body)(dz, inp, hidden, dW, dU, db, B, T, C, H);
}
