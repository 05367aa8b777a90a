//! Inner-loop kernels behind the tensor ops.
//!
//! Every kernel accumulates into `out` (`+=` semantics) and exists in two
//! variants: [`seq`] is always compiled, [`par`] only with the `parallel`
//! feature. The parallel variants split work along output rows or batch
//! entries only, so each output element is produced by exactly the same
//! floating-point operations in the same order as the sequential code and the
//! results are bit-identical. The public wrappers dispatch on a flop-count
//! threshold; below it the sequential path wins on overhead alone.

/// Work size (multiply-accumulate count) below which dispatch stays sequential.
pub const PAR_THRESHOLD: usize = 32_768;

macro_rules! dispatch {
    ($work:expr, $seqcall:expr, $parcall:expr) => {{
        #[cfg(feature = "parallel")]
        {
            if $work >= PAR_THRESHOLD {
                return $parcall;
            }
        }
        let _ = $work;
        $seqcall
    }};
}

/// `out[m,n] += a[m,k] . b[k,n]`
pub fn mm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    dispatch!(m * k * n, seq::mm(a, b, out, m, k, n), par::mm(a, b, out, m, k, n))
}

/// `out[k,n] += a[m,k]^T . b[m,n]`
pub fn mm_at(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    dispatch!(
        m * k * n,
        seq::mm_at(a, b, out, m, k, n),
        par::mm_at(a, b, out, m, k, n)
    )
}

/// `out[m,r] += a[m,n] . b[r,n]^T`
pub fn mm_bt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, r: usize) {
    dispatch!(
        m * n * r,
        seq::mm_bt(a, b, out, m, n, r),
        par::mm_bt(a, b, out, m, n, r)
    )
}

/// `out[i,p,r] += a[i,p,q] . b[i,q,r]` for each batch entry `i`.
pub fn bmm_nn(a: &[f64], b: &[f64], out: &mut [f64], batches: usize, p: usize, q: usize, r: usize) {
    dispatch!(
        batches * p * q * r,
        seq::bmm_nn(a, b, out, batches, p, q, r),
        par::bmm_nn(a, b, out, batches, p, q, r)
    )
}

/// `out[i,p,r] += a[i,p,q] . b[i,r,q]^T` for each batch entry `i`.
pub fn bmm_nt(a: &[f64], b: &[f64], out: &mut [f64], batches: usize, p: usize, q: usize, r: usize) {
    dispatch!(
        batches * p * q * r,
        seq::bmm_nt(a, b, out, batches, p, q, r),
        par::bmm_nt(a, b, out, batches, p, q, r)
    )
}

/// `out[i,q,r] += a[i,p,q]^T . b[i,p,r]` for each batch entry `i`.
pub fn bmm_tn(a: &[f64], b: &[f64], out: &mut [f64], batches: usize, p: usize, q: usize, r: usize) {
    dispatch!(
        batches * p * q * r,
        seq::bmm_tn(a, b, out, batches, p, q, r),
        par::bmm_tn(a, b, out, batches, p, q, r)
    )
}

/// Same-padded stride-1 1-D convolution.
/// `x: [bsz, c_in, t]`, `w: [c_out, c_in, k]`, `bias: [c_out]`, `out: [bsz, c_out, t]`.
pub fn conv1d(
    x: &[f64],
    w: &[f64],
    bias: &[f64],
    out: &mut [f64],
    bsz: usize,
    c_in: usize,
    t: usize,
    c_out: usize,
    k: usize,
) {
    dispatch!(
        bsz * c_in * t * c_out * k,
        seq::conv1d(x, w, bias, out, bsz, c_in, t, c_out, k),
        par::conv1d(x, w, bias, out, bsz, c_in, t, c_out, k)
    )
}

/// Input gradient of [`conv1d`]: `dx += dy (*) w`.
pub fn conv1d_dx(
    dy: &[f64],
    w: &[f64],
    dx: &mut [f64],
    bsz: usize,
    c_in: usize,
    t: usize,
    c_out: usize,
    k: usize,
) {
    dispatch!(
        bsz * c_in * t * c_out * k,
        seq::conv1d_dx(dy, w, dx, bsz, c_in, t, c_out, k),
        par::conv1d_dx(dy, w, dx, bsz, c_in, t, c_out, k)
    )
}

/// Weight gradient of [`conv1d`].
pub fn conv1d_dw(
    dy: &[f64],
    x: &[f64],
    dw: &mut [f64],
    bsz: usize,
    c_in: usize,
    t: usize,
    c_out: usize,
    k: usize,
) {
    dispatch!(
        bsz * c_in * t * c_out * k,
        seq::conv1d_dw(dy, x, dw, bsz, c_in, t, c_out, k),
        par::conv1d_dw(dy, x, dw, bsz, c_in, t, c_out, k)
    )
}

pub mod seq {
    pub fn mm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
        debug_assert_eq!(a.len(), m * k);
        debug_assert_eq!(b.len(), k * n);
        debug_assert_eq!(out.len(), m * n);
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            mm_row(&a[i * k..(i + 1) * k], b, out_row, k, n);
        }
    }

    #[inline]
    pub(super) fn mm_row(a_row: &[f64], b: &[f64], out_row: &mut [f64], k: usize, n: usize) {
        for (p, &a_ip) in a_row.iter().enumerate().take(k) {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * bv;
            }
        }
    }

    pub fn mm_at(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
        debug_assert_eq!(a.len(), m * k);
        debug_assert_eq!(b.len(), m * n);
        debug_assert_eq!(out.len(), k * n);
        for kk in 0..k {
            let out_row = &mut out[kk * n..(kk + 1) * n];
            mm_at_row(a, b, out_row, kk, m, k, n);
        }
    }

    #[inline]
    pub(super) fn mm_at_row(
        a: &[f64],
        b: &[f64],
        out_row: &mut [f64],
        kk: usize,
        m: usize,
        k: usize,
        n: usize,
    ) {
        for i in 0..m {
            let a_ik = a[i * k + kk];
            if a_ik == 0.0 {
                continue;
            }
            let b_row = &b[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += a_ik * bv;
            }
        }
    }

    pub fn mm_bt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, r: usize) {
        debug_assert_eq!(a.len(), m * n);
        debug_assert_eq!(b.len(), r * n);
        debug_assert_eq!(out.len(), m * r);
        for i in 0..m {
            let a_row = &a[i * n..(i + 1) * n];
            let out_row = &mut out[i * r..(i + 1) * r];
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = &b[j * n..(j + 1) * n];
                let mut acc = 0.0;
                for (&av, &bv) in a_row.iter().zip(b_row) {
                    acc += av * bv;
                }
                *o += acc;
            }
        }
    }

    pub fn bmm_nn(
        a: &[f64],
        b: &[f64],
        out: &mut [f64],
        batches: usize,
        p: usize,
        q: usize,
        r: usize,
    ) {
        for i in 0..batches {
            mm(
                &a[i * p * q..(i + 1) * p * q],
                &b[i * q * r..(i + 1) * q * r],
                &mut out[i * p * r..(i + 1) * p * r],
                p,
                q,
                r,
            );
        }
    }

    pub fn bmm_nt(
        a: &[f64],
        b: &[f64],
        out: &mut [f64],
        batches: usize,
        p: usize,
        q: usize,
        r: usize,
    ) {
        for i in 0..batches {
            mm_bt(
                &a[i * p * q..(i + 1) * p * q],
                &b[i * r * q..(i + 1) * r * q],
                &mut out[i * p * r..(i + 1) * p * r],
                p,
                q,
                r,
            );
        }
    }

    pub fn bmm_tn(
        a: &[f64],
        b: &[f64],
        out: &mut [f64],
        batches: usize,
        p: usize,
        q: usize,
        r: usize,
    ) {
        for i in 0..batches {
            mm_at(
                &a[i * p * q..(i + 1) * p * q],
                &b[i * p * r..(i + 1) * p * r],
                &mut out[i * q * r..(i + 1) * q * r],
                p,
                q,
                r,
            );
        }
    }

    pub fn conv1d(
        x: &[f64],
        w: &[f64],
        bias: &[f64],
        out: &mut [f64],
        bsz: usize,
        c_in: usize,
        t: usize,
        c_out: usize,
        k: usize,
    ) {
        debug_assert_eq!(x.len(), bsz * c_in * t);
        debug_assert_eq!(w.len(), c_out * c_in * k);
        debug_assert_eq!(out.len(), bsz * c_out * t);
        for b in 0..bsz {
            for o in 0..c_out {
                let out_row = &mut out[(b * c_out + o) * t..(b * c_out + o + 1) * t];
                conv1d_row(x, w, bias, out_row, b, o, c_in, t, k);
            }
        }
    }

    #[inline]
    pub(super) fn conv1d_row(
        x: &[f64],
        w: &[f64],
        bias: &[f64],
        out_row: &mut [f64],
        b: usize,
        o: usize,
        c_in: usize,
        t: usize,
        k: usize,
    ) {
        let pad = k / 2;
        for v in out_row.iter_mut() {
            *v += bias[o];
        }
        for i in 0..c_in {
            let x_row = &x[(b * c_in + i) * t..(b * c_in + i + 1) * t];
            let w_row = &w[(o * c_in + i) * k..(o * c_in + i + 1) * k];
            for (dk, &wv) in w_row.iter().enumerate() {
                if wv == 0.0 {
                    continue;
                }
                // out[tt] += w[dk] * x[tt + dk - pad] over the valid range
                let (t_lo, t_hi) = valid_range(t, dk, pad);
                for tt in t_lo..t_hi {
                    out_row[tt] += wv * x_row[tt + dk - pad];
                }
            }
        }
    }

    /// Output positions `tt` for which `tt + dk - pad` lands inside `[0, t)`.
    #[inline]
    pub(super) fn valid_range(t: usize, dk: usize, pad: usize) -> (usize, usize) {
        let lo = pad.saturating_sub(dk);
        let hi = (t + pad).saturating_sub(dk).min(t);
        (lo.min(hi), hi)
    }

    pub fn conv1d_dx(
        dy: &[f64],
        w: &[f64],
        dx: &mut [f64],
        bsz: usize,
        c_in: usize,
        t: usize,
        c_out: usize,
        k: usize,
    ) {
        for b in 0..bsz {
            for i in 0..c_in {
                let dx_row = &mut dx[(b * c_in + i) * t..(b * c_in + i + 1) * t];
                conv1d_dx_row(dy, w, dx_row, b, i, c_in, t, c_out, k);
            }
        }
    }

    #[inline]
    pub(super) fn conv1d_dx_row(
        dy: &[f64],
        w: &[f64],
        dx_row: &mut [f64],
        b: usize,
        i: usize,
        c_in: usize,
        t: usize,
        c_out: usize,
        k: usize,
    ) {
        let pad = k / 2;
        for o in 0..c_out {
            let dy_row = &dy[(b * c_out + o) * t..(b * c_out + o + 1) * t];
            let w_row = &w[(o * c_in + i) * k..(o * c_in + i + 1) * k];
            for (dk, &wv) in w_row.iter().enumerate() {
                if wv == 0.0 {
                    continue;
                }
                // dx[s] += w[dk] * dy[s - dk + pad]; reuse the forward range
                // with the roles of input and output swapped.
                let (t_lo, t_hi) = valid_range(t, dk, pad);
                for tt in t_lo..t_hi {
                    dx_row[tt + dk - pad] += wv * dy_row[tt];
                }
            }
        }
    }

    pub fn conv1d_dw(
        dy: &[f64],
        x: &[f64],
        dw: &mut [f64],
        bsz: usize,
        c_in: usize,
        t: usize,
        c_out: usize,
        k: usize,
    ) {
        for o in 0..c_out {
            let dw_block = &mut dw[o * c_in * k..(o + 1) * c_in * k];
            conv1d_dw_block(dy, x, dw_block, o, bsz, c_in, t, c_out, k);
        }
    }

    #[inline]
    pub(super) fn conv1d_dw_block(
        dy: &[f64],
        x: &[f64],
        dw_block: &mut [f64],
        o: usize,
        bsz: usize,
        c_in: usize,
        t: usize,
        c_out: usize,
        k: usize,
    ) {
        let pad = k / 2;
        for b in 0..bsz {
            let dy_row = &dy[(b * c_out + o) * t..(b * c_out + o + 1) * t];
            for i in 0..c_in {
                let x_row = &x[(b * c_in + i) * t..(b * c_in + i + 1) * t];
                for dk in 0..k {
                    let (t_lo, t_hi) = valid_range(t, dk, pad);
                    let mut acc = 0.0;
                    for tt in t_lo..t_hi {
                        acc += dy_row[tt] * x_row[tt + dk - pad];
                    }
                    dw_block[i * k + dk] += acc;
                }
            }
        }
    }
}

#[cfg(feature = "parallel")]
pub mod par {
    use rayon::prelude::*;

    use super::seq;

    pub fn mm(a: &[f64], b: &[f64], out: &mut [f64], _m: usize, k: usize, n: usize) {
        out.par_chunks_mut(n).enumerate().for_each(|(i, out_row)| {
            seq::mm_row(&a[i * k..(i + 1) * k], b, out_row, k, n);
        });
    }

    pub fn mm_at(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
        out.par_chunks_mut(n).enumerate().for_each(|(kk, out_row)| {
            seq::mm_at_row(a, b, out_row, kk, m, k, n);
        });
    }

    pub fn mm_bt(a: &[f64], b: &[f64], out: &mut [f64], _m: usize, n: usize, r: usize) {
        out.par_chunks_mut(r).enumerate().for_each(|(i, out_row)| {
            let a_row = &a[i * n..(i + 1) * n];
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = &b[j * n..(j + 1) * n];
                let mut acc = 0.0;
                for (&av, &bv) in a_row.iter().zip(b_row) {
                    acc += av * bv;
                }
                *o += acc;
            }
        });
    }

    pub fn bmm_nn(
        a: &[f64],
        b: &[f64],
        out: &mut [f64],
        batches: usize,
        p: usize,
        q: usize,
        r: usize,
    ) {
        let _ = batches;
        out.par_chunks_mut(p * r).enumerate().for_each(|(i, o)| {
            seq::mm(
                &a[i * p * q..(i + 1) * p * q],
                &b[i * q * r..(i + 1) * q * r],
                o,
                p,
                q,
                r,
            );
        });
    }

    pub fn bmm_nt(
        a: &[f64],
        b: &[f64],
        out: &mut [f64],
        batches: usize,
        p: usize,
        q: usize,
        r: usize,
    ) {
        let _ = batches;
        out.par_chunks_mut(p * r).enumerate().for_each(|(i, o)| {
            seq::mm_bt(
                &a[i * p * q..(i + 1) * p * q],
                &b[i * r * q..(i + 1) * r * q],
                o,
                p,
                q,
                r,
            );
        });
    }

    pub fn bmm_tn(
        a: &[f64],
        b: &[f64],
        out: &mut [f64],
        batches: usize,
        p: usize,
        q: usize,
        r: usize,
    ) {
        let _ = batches;
        out.par_chunks_mut(q * r).enumerate().for_each(|(i, o)| {
            seq::mm_at(
                &a[i * p * q..(i + 1) * p * q],
                &b[i * p * r..(i + 1) * p * r],
                o,
                p,
                q,
                r,
            );
        });
    }

    pub fn conv1d(
        x: &[f64],
        w: &[f64],
        bias: &[f64],
        out: &mut [f64],
        _bsz: usize,
        c_in: usize,
        t: usize,
        c_out: usize,
        k: usize,
    ) {
        out.par_chunks_mut(t).enumerate().for_each(|(row, out_row)| {
            let (b, o) = (row / c_out, row % c_out);
            seq::conv1d_row(x, w, bias, out_row, b, o, c_in, t, k);
        });
    }

    pub fn conv1d_dx(
        dy: &[f64],
        w: &[f64],
        dx: &mut [f64],
        _bsz: usize,
        c_in: usize,
        t: usize,
        c_out: usize,
        k: usize,
    ) {
        dx.par_chunks_mut(t).enumerate().for_each(|(row, dx_row)| {
            let (b, i) = (row / c_in, row % c_in);
            seq::conv1d_dx_row(dy, w, dx_row, b, i, c_in, t, c_out, k);
        });
    }

    pub fn conv1d_dw(
        dy: &[f64],
        x: &[f64],
        dw: &mut [f64],
        bsz: usize,
        c_in: usize,
        t: usize,
        c_out: usize,
        k: usize,
    ) {
        dw.par_chunks_mut(c_in * k)
            .enumerate()
            .for_each(|(o, dw_block)| {
                seq::conv1d_dw_block(dy, x, dw_block, o, bsz, c_in, t, c_out, k);
            });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        out
    }

    fn ramp(len: usize) -> Vec<f64> {
        (0..len).map(|i| (i as f64 * 0.37).sin()).collect()
    }

    #[test]
    fn mm_matches_naive_triple_loop() {
        let (m, k, n) = (5, 7, 4);
        let a = ramp(m * k);
        let b = ramp(k * n);
        let mut out = vec![0.0; m * n];
        mm(&a, &b, &mut out, m, k, n);
        let want = naive_mm(&a, &b, m, k, n);
        for (x, y) in out.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_variants_match_explicit_transpose() {
        let (m, k, n) = (6, 5, 4);
        let a = ramp(m * k);
        let b = ramp(m * n);
        // A^T . B
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for j in 0..k {
                at[j * m + i] = a[i * k + j];
            }
        }
        let want = naive_mm(&at, &b, k, m, n);
        let mut out = vec![0.0; k * n];
        mm_at(&a, &b, &mut out, m, k, n);
        for (x, y) in out.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // A . B^T
        let c = ramp(n * k);
        let mut ct = vec![0.0; k * n];
        for i in 0..n {
            for j in 0..k {
                ct[j * n + i] = c[i * k + j];
            }
        }
        let a2 = ramp(m * k);
        let want = naive_mm(&a2, &ct, m, k, n);
        let mut out = vec![0.0; m * n];
        mm_bt(&a2, &c, &mut out, m, k, n);
        for (x, y) in out.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn conv1d_identity_kernel_passes_through() {
        // k = 1, single channel, weight 1: output equals input.
        let x = vec![1.0, 2.0, 3.0];
        let w = vec![1.0];
        let bias = vec![0.0];
        let mut out = vec![0.0; 3];
        conv1d(&x, &w, &bias, &mut out, 1, 1, 3, 1, 1);
        assert_eq!(out, x);
    }

    #[test]
    fn conv1d_same_padding_hand_case() {
        // x = [1,2,3], k = 3, w = [1,1,1]: zero-padded sums of neighbors.
        let x = vec![1.0, 2.0, 3.0];
        let w = vec![1.0, 1.0, 1.0];
        let bias = vec![0.0];
        let mut out = vec![0.0; 3];
        conv1d(&x, &w, &bias, &mut out, 1, 1, 3, 1, 3);
        assert_eq!(out, vec![3.0, 6.0, 5.0]);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_kernels_bit_match_sequential() {
        let (m, k, n) = (33, 47, 29);
        let a = ramp(m * k);
        let b = ramp(k * n);
        let mut s = vec![0.0; m * n];
        let mut p = vec![0.0; m * n];
        seq::mm(&a, &b, &mut s, m, k, n);
        par::mm(&a, &b, &mut p, m, k, n);
        assert_eq!(s, p);

        let x = ramp(2 * 3 * 40);
        let w = ramp(5 * 3 * 7);
        let bias = ramp(5);
        let mut so = vec![0.0; 2 * 5 * 40];
        let mut po = vec![0.0; 2 * 5 * 40];
        seq::conv1d(&x, &w, &bias, &mut so, 2, 3, 40, 5, 7);
        par::conv1d(&x, &w, &bias, &mut po, 2, 3, 40, 5, 7);
        assert_eq!(so, po);

        let bm = ramp(6 * 4 * 5);
        let bn = ramp(6 * 5 * 3);
        let mut sb = vec![0.0; 6 * 4 * 3];
        let mut pb = vec![0.0; 6 * 4 * 3];
        seq::bmm_nn(&bm, &bn, &mut sb, 6, 4, 5, 3);
        par::bmm_nn(&bm, &bn, &mut pb, 6, 4, 5, 3);
        assert_eq!(sb, pb);
    }
}
