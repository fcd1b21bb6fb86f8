use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tape, Tensor, Var};

/// Work threshold below which GEMMs stay single-threaded.
const PAR_FLOPS: usize = 1 << 18;

/// c += a(m×k) · b(k×n), all row-major.
pub(crate) fn gemm<E: Scalar>(m: usize, k: usize, n: usize, a: &[E], b: &[E], c: &mut [E]) {
    let row = |i: usize, arow: &[E], crow: &mut [E]| {
        let _ = i;
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    };
    if m * k * n >= PAR_FLOPS {
        c.par_chunks_mut(n).zip(a.par_chunks(k)).enumerate().for_each(|(i, (crow, arow))| {
            row(i, arow, crow);
        });
    } else {
        for i in 0..m {
            row(i, &a[i * k..(i + 1) * k], &mut c[i * n..(i + 1) * n]);
        }
    }
}

/// c += a(m×k) · b(n×k)ᵀ.
pub(crate) fn gemm_nt<E: Scalar>(m: usize, k: usize, n: usize, a: &[E], b: &[E], c: &mut [E]) {
    let row = |arow: &[E], crow: &mut [E]| {
        for (j, cv) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = E::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *cv += acc;
        }
    };
    if m * k * n >= PAR_FLOPS {
        c.par_chunks_mut(n).zip(a.par_chunks(k)).for_each(|(crow, arow)| row(arow, crow));
    } else {
        for i in 0..m {
            row(&a[i * k..(i + 1) * k], &mut c[i * n..(i + 1) * n]);
        }
    }
}

/// c += a(k×m)ᵀ · b(k×n). Serial over k so accumulation order is fixed.
pub(crate) fn gemm_tn<E: Scalar>(m: usize, k: usize, n: usize, a: &[E], b: &[E], c: &mut [E]) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

impl<E: Scalar> Tape<E> {
    /// Standard matrix product (m×k)·(k×n) → m×n.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        if av.rank() != 2 || bv.rank() != 2 {
            return Err(Error::shape("matmul", format!("ranks {:?} and {:?}", av.shape(), bv.shape())));
        }
        let (m, k) = (av.shape()[0], av.shape()[1]);
        let (k2, n) = (bv.shape()[0], bv.shape()[1]);
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner extents disagree: {m}x{k} times {k2}x{n}"),
            ));
        }
        let mut data = vec![E::zero(); m * n];
        gemm(m, k, n, av.data(), bv.data(), &mut data);
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(
            out,
            Some(Box::new(move |g, buf| {
                // gA = gC·Bᵀ, gB = Aᵀ·gC
                buf.accum_map(a, &[m, k], |dst| gemm_nt(m, n, k, g.data(), bv.data(), dst));
                buf.accum_map(b, &[k, n], |dst| gemm_tn(k, m, n, av.data(), g.data(), dst));
            })),
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x).clone();
        if xv.rank() != 2 {
            return Err(Error::shape("transpose", format!("rank {} input", xv.rank())));
        }
        let (r, c) = (xv.shape()[0], xv.shape()[1]);
        let mut data = vec![E::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = xv.data()[i * c + j];
            }
        }
        let out = Tensor::new(vec![c, r], data)?;
        Ok(self.push(
            out,
            Some(Box::new(move |g, buf| {
                buf.accum_map(x, &[r, c], |dst| {
                    for i in 0..r {
                        for j in 0..c {
                            dst[i * c + j] += g.data()[j * r + i];
                        }
                    }
                });
            })),
        ))
    }

    /// View the same values under a new shape.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let orig = xv.shape().to_vec();
        let out = xv.reshaped(shape)?;
        Ok(self.push(
            out,
            Some(Box::new(move |g, buf| {
                buf.accum(x, g.reshaped(&orig).expect("grad matches output shape"));
            })),
        ))
    }

    /// Rows [start, start+count) of a matrix.
    pub fn slice_rows(&mut self, m: Var, start: usize, count: usize) -> Result<Var> {
        let mv = self.value(m).clone();
        if mv.rank() != 2 {
            return Err(Error::shape("slice_rows", format!("rank {} input", mv.rank())));
        }
        let (r, c) = (mv.shape()[0], mv.shape()[1]);
        if start + count > r || count == 0 {
            return Err(Error::invalid("slice_rows", format!("rows {start}..{} of {r}", start + count)));
        }
        let data = mv.data()[start * c..(start + count) * c].to_vec();
        let out = Tensor::new(vec![count, c], data)?;
        Ok(self.push(
            out,
            Some(Box::new(move |g, buf| {
                buf.accum_map(m, &[r, c], |dst| {
                    for (d, &gv) in dst[start * c..(start + count) * c].iter_mut().zip(g.data()) {
                        *d += gv;
                    }
                });
            })),
        ))
    }

    /// Columns [start, start+count) of a matrix.
    pub fn slice_cols(&mut self, m: Var, start: usize, count: usize) -> Result<Var> {
        let mv = self.value(m).clone();
        if mv.rank() != 2 {
            return Err(Error::shape("slice_cols", format!("rank {} input", mv.rank())));
        }
        let (r, c) = (mv.shape()[0], mv.shape()[1]);
        if start + count > c || count == 0 {
            return Err(Error::invalid("slice_cols", format!("cols {start}..{} of {c}", start + count)));
        }
        let mut data = Vec::with_capacity(r * count);
        for row in mv.data().chunks_exact(c) {
            data.extend_from_slice(&row[start..start + count]);
        }
        let out = Tensor::new(vec![r, count], data)?;
        Ok(self.push(
            out,
            Some(Box::new(move |g, buf| {
                buf.accum_map(m, &[r, c], |dst| {
                    for (drow, grow) in dst.chunks_exact_mut(c).zip(g.data().chunks_exact(count)) {
                        for (d, &gv) in drow[start..start + count].iter_mut().zip(grow) {
                            *d += gv;
                        }
                    }
                });
            })),
        ))
    }

    /// Elements [start, start+count) of a vector.
    pub fn slice_vec(&mut self, v: Var, start: usize, count: usize) -> Result<Var> {
        let vv = self.value(v).clone();
        if vv.rank() != 1 {
            return Err(Error::shape("slice_vec", format!("rank {} input", vv.rank())));
        }
        let n = vv.shape()[0];
        if start + count > n || count == 0 {
            return Err(Error::invalid("slice_vec", format!("range {start}..{} of {n}", start + count)));
        }
        let out = Tensor::new(vec![count], vv.data()[start..start + count].to_vec())?;
        Ok(self.push(
            out,
            Some(Box::new(move |g, buf| {
                buf.accum_map(v, &[n], |dst| {
                    for (d, &gv) in dst[start..start + count].iter_mut().zip(g.data()) {
                        *d += gv;
                    }
                });
            })),
        ))
    }

    /// Concatenate matrices with a common column count along rows.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat_rows", "no inputs".to_string()));
        }
        let cols = {
            let first = self.value(parts[0]);
            if first.rank() != 2 {
                return Err(Error::shape("concat_rows", format!("rank {} input", first.rank())));
            }
            first.shape()[1]
        };
        let mut data = Vec::new();
        let mut row_counts = Vec::with_capacity(parts.len());
        for &p in parts {
            let pv = self.value(p);
            if pv.rank() != 2 || pv.shape()[1] != cols {
                return Err(Error::shape("concat_rows", format!("{:?} vs {cols} columns", pv.shape())));
            }
            row_counts.push(pv.shape()[0]);
            data.extend_from_slice(pv.data());
        }
        let rows: usize = row_counts.iter().sum();
        let out = Tensor::new(vec![rows, cols], data)?;
        let parts = parts.to_vec();
        Ok(self.push(
            out,
            Some(Box::new(move |g, buf| {
                let mut offset = 0;
                for (&p, &rc) in parts.iter().zip(&row_counts) {
                    buf.accum_map(p, &[rc, cols], |dst| {
                        for (d, &gv) in dst.iter_mut().zip(&g.data()[offset..offset + rc * cols]) {
                            *d += gv;
                        }
                    });
                    offset += rc * cols;
                }
            })),
        ))
    }

    /// Stack length-c vectors into an n×c matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::invalid("stack_rows", "no inputs".to_string()));
        }
        let c = {
            let first = self.value(rows[0]);
            if first.rank() != 1 {
                return Err(Error::shape("stack_rows", format!("rank {} input", first.rank())));
            }
            first.shape()[0]
        };
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            let rv = self.value(r);
            if rv.shape() != [c] {
                return Err(Error::shape("stack_rows", format!("{:?} vs length {c}", rv.shape())));
            }
            data.extend_from_slice(rv.data());
        }
        let out = Tensor::new(vec![rows.len(), c], data)?;
        let rows = rows.to_vec();
        Ok(self.push(
            out,
            Some(Box::new(move |g, buf| {
                for (i, &r) in rows.iter().enumerate() {
                    buf.accum_map(r, &[c], |dst| {
                        for (d, &gv) in dst.iter_mut().zip(&g.data()[i * c..(i + 1) * c]) {
                            *d += gv;
                        }
                    });
                }
            })),
        ))
    }

    /// Stack scalar variables into a vector.
    pub fn stack_scalars(&mut self, items: &[Var]) -> Result<Var> {
        if items.is_empty() {
            return Err(Error::invalid("stack_scalars", "no inputs".to_string()));
        }
        let mut data = Vec::with_capacity(items.len());
        for &s in items {
            let sv = self.value(s);
            if sv.len() != 1 {
                return Err(Error::shape("stack_scalars", format!("{:?} is not scalar", sv.shape())));
            }
            data.push(sv.item());
        }
        let out = Tensor::new(vec![items.len()], data)?;
        let items = items.to_vec();
        Ok(self.push(
            out,
            Some(Box::new(move |g, buf| {
                for (i, &s) in items.iter().enumerate() {
                    buf.accum(s, Tensor::scalar(g.data()[i]));
                }
            })),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor2(rows: usize, cols: usize, vals: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![rows, cols], vals.to_vec()).unwrap()
    }

    #[test]
    fn identity_times_matrix_is_matrix() {
        let mut tape = Tape::<f64>::new();
        let eye = tape.leaf(tensor2(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]));
        let b = tape.leaf(tensor2(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let c = tape.matmul(eye, b).unwrap();
        assert_eq!(tape.value(c).data(), tape.value(b).data());
    }

    #[test]
    fn one_by_one_product() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(tensor2(1, 1, &[2.0]));
        let b = tape.leaf(tensor2(1, 1, &[3.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[6.0]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(&[4, 3]));
        let b = tape.leaf(Tensor::zeros(&[4, 5]));
        let err = tape.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("4x3"));
    }

    #[test]
    fn matmul_matches_triple_loop_reference() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let a: Vec<f64> = (0..4 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..3 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut expect = vec![0.0; 4 * 5];
        for i in 0..4 {
            for j in 0..5 {
                for p in 0..3 {
                    expect[i * 5 + j] += a[i * 3 + p] * b[p * 5 + j];
                }
            }
        }
        let mut tape = Tape::<f64>::new();
        let av = tape.leaf(tensor2(4, 3, &a));
        let bv = tape.leaf(tensor2(3, 5, &b));
        let c = tape.matmul(av, bv).unwrap();
        for (got, want) in tape.value(c).data().iter().zip(&expect) {
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn slice_and_concat_round_trip() {
        let mut tape = Tape::<f64>::new();
        let m = tape.leaf(tensor2(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let top = tape.slice_rows(m, 0, 1).unwrap();
        let rest = tape.slice_rows(m, 1, 2).unwrap();
        let back = tape.concat_rows(&[top, rest]).unwrap();
        assert_eq!(tape.value(back).data(), tape.value(m).data());
    }

    #[test]
    fn transpose_backward_routes_gradient() {
        let mut tape = Tape::<f64>::new();
        let p = tape.register_param("m", tensor2(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let m = tape.param(p);
        let t = tape.transpose(m).unwrap();
        let row = tape.slice_rows(t, 0, 1).unwrap(); // first column of m
        let s = tape.sum_all(row);
        tape.backward(s).unwrap();
        assert_eq!(tape.param_grad(p).data(), &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }
}
