use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tape, Tensor, Var};

impl<E: Scalar> Tape<E> {
    /// Sum of every element, as a scalar.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let total: E = xv.data().iter().copied().sum();
        let shape = xv.shape().to_vec();
        self.push(
            Tensor::scalar(total),
            Some(Box::new(move |g, buf| {
                let gv = g.item();
                buf.accum_map(x, &shape, |dst| {
                    for d in dst.iter_mut() {
                        *d += gv;
                    }
                });
            })),
        )
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let s = self.sum_all(x);
        self.mul_scalar(s, E::of(1.0 / n as f64))
    }

    /// Column sums of an r×c matrix, as a length-c vector.
    pub fn column_sums(&mut self, m: Var) -> Result<Var> {
        let mv = self.value(m).clone();
        if mv.rank() != 2 {
            return Err(Error::shape("column_sums", format!("rank {} input", mv.rank())));
        }
        let (r, c) = (mv.shape()[0], mv.shape()[1]);
        let mut data = vec![E::zero(); c];
        for row in mv.data().chunks_exact(c) {
            for (d, &v) in data.iter_mut().zip(row) {
                *d += v;
            }
        }
        let out = Tensor::new(vec![c], data)?;
        Ok(self.push(
            out,
            Some(Box::new(move |g, buf| {
                buf.accum_map(m, &[r, c], |dst| {
                    for drow in dst.chunks_exact_mut(c) {
                        for (d, &gv) in drow.iter_mut().zip(g.data()) {
                            *d += gv;
                        }
                    }
                });
            })),
        ))
    }

    pub fn column_means(&mut self, m: Var) -> Result<Var> {
        let r = self.value(m).shape()[0];
        let s = self.column_sums(m)?;
        Ok(self.mul_scalar(s, E::of(1.0 / r as f64)))
    }

    /// Row sums of an r×c matrix, as a length-r vector.
    pub fn row_sums(&mut self, m: Var) -> Result<Var> {
        let mv = self.value(m).clone();
        if mv.rank() != 2 {
            return Err(Error::shape("row_sums", format!("rank {} input", mv.rank())));
        }
        let (r, c) = (mv.shape()[0], mv.shape()[1]);
        let data: Vec<E> = mv.data().chunks_exact(c).map(|row| row.iter().copied().sum()).collect();
        let out = Tensor::new(vec![r], data)?;
        Ok(self.push(
            out,
            Some(Box::new(move |g, buf| {
                buf.accum_map(m, &[r, c], |dst| {
                    for (i, drow) in dst.chunks_exact_mut(c).enumerate() {
                        let gv = g.data()[i];
                        for d in drow.iter_mut() {
                            *d += gv;
                        }
                    }
                });
            })),
        ))
    }

    /// Sum over the spatial plane: H×W×D → D, or B×H×W×D → B×D.
    pub fn spatial_sum(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x).clone();
        let (batched, b, hw, d) = match xv.shape() {
            [h, w, d] => (false, 1, h * w, *d),
            [b, h, w, d] => (true, *b, h * w, *d),
            other => return Err(Error::shape("spatial_sum", format!("input rank {}", other.len()))),
        };
        let mut data = vec![E::zero(); b * d];
        for bi in 0..b {
            let dst = &mut data[bi * d..(bi + 1) * d];
            for row in xv.data()[bi * hw * d..(bi + 1) * hw * d].chunks_exact(d) {
                for (o, &v) in dst.iter_mut().zip(row) {
                    *o += v;
                }
            }
        }
        let out_shape = if batched { vec![b, d] } else { vec![d] };
        let out = Tensor::new(out_shape, data)?;
        let xshape = xv.shape().to_vec();
        Ok(self.push(
            out,
            Some(Box::new(move |g, buf| {
                buf.accum_map(x, &xshape, |dst| {
                    for bi in 0..b {
                        let grow = &g.data()[bi * d..(bi + 1) * d];
                        for drow in dst[bi * hw * d..(bi + 1) * hw * d].chunks_exact_mut(d) {
                            for (o, &gv) in drow.iter_mut().zip(grow) {
                                *o += gv;
                            }
                        }
                    }
                });
            })),
        ))
    }

    /// Trace of a square matrix.
    pub fn trace(&mut self, m: Var) -> Result<Var> {
        let mv = self.value(m);
        if mv.rank() != 2 || mv.shape()[0] != mv.shape()[1] {
            return Err(Error::shape("trace", format!("{:?} is not square", mv.shape())));
        }
        let n = mv.shape()[0];
        let total: E = (0..n).map(|i| mv.data()[i * n + i]).sum();
        Ok(self.push(
            Tensor::scalar(total),
            Some(Box::new(move |g, buf| {
                let gv = g.item();
                buf.accum_map(m, &[n, n], |dst| {
                    for i in 0..n {
                        dst[i * n + i] += gv;
                    }
                });
            })),
        ))
    }

    /// Squared Frobenius norm of a matrix (sum of squared entries).
    pub fn frobenius_sq(&mut self, m: Var) -> Result<Var> {
        let sq = self.mul(m, m)?;
        Ok(self.sum_all(sq))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_and_row_sums() {
        let mut tape = Tape::<f64>::new();
        let m = tape.leaf(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let cs = tape.column_sums(m).unwrap();
        assert_eq!(tape.value(cs).data(), &[5.0, 7.0, 9.0]);
        let rs = tape.row_sums(m).unwrap();
        assert_eq!(tape.value(rs).data(), &[6.0, 15.0]);
    }

    #[test]
    fn spatial_sum_over_batch() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 2, 2, 1], |i| i as f64));
        let y = tape.spatial_sum(x).unwrap();
        assert_eq!(tape.shape(y), &[2, 1]);
        assert_eq!(tape.value(y).data(), &[6.0, 22.0]);
    }

    #[test]
    fn trace_and_frobenius() {
        let mut tape = Tape::<f64>::new();
        let m = tape.leaf(Tensor::new(vec![2, 2], vec![2.0, 1.0, -1.0, 3.0]).unwrap());
        let t = tape.trace(m).unwrap();
        assert_eq!(tape.value(t).item(), 5.0);
        let f = tape.frobenius_sq(m).unwrap();
        assert_eq!(tape.value(f).item(), 15.0);
    }
}
