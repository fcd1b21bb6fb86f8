use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tape, Tensor, Var};

impl<E: Scalar> Tape<E> {
    /// Elementwise max(0, x). The derivative at exactly 0 is 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let xin = self.value(x).clone();
        let out = xin.map(|v| if v > E::zero() { v } else { E::zero() });
        self.push(
            out,
            Some(Box::new(move |g, buf| {
                buf.accum_map(x, xin.shape(), |dst| {
                    for ((d, &gv), &xv) in dst.iter_mut().zip(g.data()).zip(xin.data()) {
                        if xv > E::zero() {
                            *d += gv;
                        }
                    }
                });
            })),
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let xin = self.value(x).clone();
        let out = xin.map(|v| E::one() / (E::one() + (-v).exp()));
        let yout = out.clone();
        self.push(
            out,
            Some(Box::new(move |g, buf| {
                buf.accum_map(x, yout.shape(), |dst| {
                    for ((d, &gv), &yv) in dst.iter_mut().zip(g.data()).zip(yout.data()) {
                        *d += gv * yv * (E::one() - yv);
                    }
                });
            })),
        )
    }

    /// Hard clamp to [lo, hi]; no gradient flows where the clamp binds.
    pub fn clamp(&mut self, x: Var, lo: E, hi: E) -> Var {
        let xin = self.value(x).clone();
        let out = xin.map(|v| if v < lo { lo } else if v > hi { hi } else { v });
        self.push(
            out,
            Some(Box::new(move |g, buf| {
                buf.accum_map(x, xin.shape(), |dst| {
                    for ((d, &gv), &xv) in dst.iter_mut().zip(g.data()).zip(xin.data()) {
                        if xv > lo && xv < hi {
                            *d += gv;
                        }
                    }
                });
            })),
        )
    }

    /// Natural log; inputs must be positive (callers clamp first).
    pub fn ln(&mut self, x: Var) -> Var {
        let xin = self.value(x).clone();
        let out = xin.map(|v| v.ln());
        self.push(
            out,
            Some(Box::new(move |g, buf| {
                buf.accum_map(x, xin.shape(), |dst| {
                    for ((d, &gv), &xv) in dst.iter_mut().zip(g.data()).zip(xin.data()) {
                        *d += gv / xv;
                    }
                });
            })),
        )
    }

    pub fn neg(&mut self, x: Var) -> Var {
        let xin = self.value(x).clone();
        let out = xin.map(|v| -v);
        let shape = xin.shape().to_vec();
        self.push(
            out,
            Some(Box::new(move |g, buf| {
                buf.accum_map(x, &shape, |dst| {
                    for (d, &gv) in dst.iter_mut().zip(g.data()) {
                        *d -= gv;
                    }
                });
            })),
        )
    }

    /// Identity forward; negated gradient backward. Realizes the adversarial
    /// saddle contract with a single optimizer step.
    pub fn grad_reverse(&mut self, x: Var) -> Var {
        let xin = self.value(x).clone();
        let shape = xin.shape().to_vec();
        self.push(
            xin,
            Some(Box::new(move |g, buf| {
                buf.accum_map(x, &shape, |dst| {
                    for (d, &gv) in dst.iter_mut().zip(g.data()) {
                        *d -= gv;
                    }
                });
            })),
        )
    }

    fn binary_same_shape(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
    ) -> Result<(Tensor<E>, Tensor<E>)> {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        if av.shape() != bv.shape() {
            return Err(Error::shape(op, format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        Ok((av, bv))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = self.binary_same_shape("add", a, b)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let shape = av.shape().to_vec();
        Ok(self.push(
            out,
            Some(Box::new(move |g, buf| {
                buf.accum(a, g.clone());
                let _ = &shape;
                buf.accum(b, g.clone());
            })),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = self.binary_same_shape("sub", a, b)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x - y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let shape = av.shape().to_vec();
        Ok(self.push(
            out,
            Some(Box::new(move |g, buf| {
                buf.accum(a, g.clone());
                buf.accum_map(b, &shape, |dst| {
                    for (d, &gv) in dst.iter_mut().zip(g.data()) {
                        *d -= gv;
                    }
                });
            })),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = self.binary_same_shape("mul", a, b)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(
            out,
            Some(Box::new(move |g, buf| {
                buf.accum_map(a, av.shape(), |dst| {
                    for ((d, &gv), &yv) in dst.iter_mut().zip(g.data()).zip(bv.data()) {
                        *d += gv * yv;
                    }
                });
                buf.accum_map(b, bv.shape(), |dst| {
                    for ((d, &gv), &xv) in dst.iter_mut().zip(g.data()).zip(av.data()) {
                        *d += gv * xv;
                    }
                });
            })),
        ))
    }

    pub fn add_scalar(&mut self, x: Var, c: E) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Some(Box::new(move |g, buf| buf.accum(x, g.clone()))))
    }

    pub fn mul_scalar(&mut self, x: Var, c: E) -> Var {
        let out = self.value(x).map(|v| v * c);
        let shape = self.shape(x).to_vec();
        self.push(
            out,
            Some(Box::new(move |g, buf| {
                buf.accum_map(x, &shape, |dst| {
                    for (d, &gv) in dst.iter_mut().zip(g.data()) {
                        *d += gv * c;
                    }
                });
            })),
        )
    }

    /// Multiply a tensor by a scalar variable (differentiable in both).
    pub fn mul_scalar_var(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.len() != 1 {
            return Err(Error::shape("mul_scalar_var", format!("scale has shape {:?}", sv.shape())));
        }
        let sval = sv.item();
        let xin = self.value(x).clone();
        let out = xin.map(|v| v * sval);
        Ok(self.push(
            out,
            Some(Box::new(move |g, buf| {
                buf.accum_map(x, xin.shape(), |dst| {
                    for (d, &gv) in dst.iter_mut().zip(g.data()) {
                        *d += gv * sval;
                    }
                });
                let ds = g.data().iter().zip(xin.data()).map(|(&gv, &xv)| gv * xv).sum();
                buf.accum(s, Tensor::scalar(ds));
            })),
        ))
    }

    /// Per-channel affine y[..., c] = x[..., c] * s[c] + b[c] over the last axis.
    pub fn scale_channels(&mut self, x: Var, s: Var, b: Var) -> Result<Var> {
        let xin = self.value(x).clone();
        let sv = self.value(s).clone();
        let bv = self.value(b).clone();
        let c = *xin.shape().last().expect("non-empty shape");
        if sv.shape() != [c] || bv.shape() != [c] {
            return Err(Error::shape(
                "scale_channels",
                format!("channels {c}, scale {:?}, bias {:?}", sv.shape(), bv.shape()),
            ));
        }
        let mut data = Vec::with_capacity(xin.len());
        for chunk in xin.data().chunks_exact(c) {
            for (ch, &v) in chunk.iter().enumerate() {
                data.push(v * sv.data()[ch] + bv.data()[ch]);
            }
        }
        let out = Tensor::new(xin.shape().to_vec(), data)?;
        Ok(self.push(
            out,
            Some(Box::new(move |g, buf| {
                buf.accum_map(x, xin.shape(), |dst| {
                    for (drow, grow) in dst.chunks_exact_mut(c).zip(g.data().chunks_exact(c)) {
                        for (ch, (d, &gv)) in drow.iter_mut().zip(grow).enumerate() {
                            *d += gv * sv.data()[ch];
                        }
                    }
                });
                buf.accum_map(s, &[c], |dst| {
                    for (grow, xrow) in g.data().chunks_exact(c).zip(xin.data().chunks_exact(c)) {
                        for (ch, (&gv, &xv)) in grow.iter().zip(xrow).enumerate() {
                            dst[ch] += gv * xv;
                        }
                    }
                });
                buf.accum_map(b, &[c], |dst| {
                    for grow in g.data().chunks_exact(c) {
                        for (ch, &gv) in grow.iter().enumerate() {
                            dst[ch] += gv;
                        }
                    }
                });
            })),
        ))
    }

    /// Broadcast-add a length-c vector to every row of an r×c matrix.
    pub fn add_row_broadcast(&mut self, m: Var, v: Var) -> Result<Var> {
        self.row_broadcast("add_row_broadcast", m, v, false)
    }

    /// Broadcast-subtract a length-c vector from every row of an r×c matrix.
    pub fn sub_row_broadcast(&mut self, m: Var, v: Var) -> Result<Var> {
        self.row_broadcast("sub_row_broadcast", m, v, true)
    }

    fn row_broadcast(&mut self, op: &'static str, m: Var, v: Var, negate: bool) -> Result<Var> {
        let mv = self.value(m).clone();
        let vv = self.value(v).clone();
        if mv.rank() != 2 || vv.rank() != 1 || mv.shape()[1] != vv.shape()[0] {
            return Err(Error::shape(op, format!("{:?} with {:?}", mv.shape(), vv.shape())));
        }
        let c = mv.shape()[1];
        let sign = if negate { -E::one() } else { E::one() };
        let mut data = Vec::with_capacity(mv.len());
        for row in mv.data().chunks_exact(c) {
            for (j, &x) in row.iter().enumerate() {
                data.push(x + sign * vv.data()[j]);
            }
        }
        let out = Tensor::new(mv.shape().to_vec(), data)?;
        Ok(self.push(
            out,
            Some(Box::new(move |g, buf| {
                buf.accum(m, g.clone());
                buf.accum_map(v, &[c], |dst| {
                    for grow in g.data().chunks_exact(c) {
                        for (j, &gv) in grow.iter().enumerate() {
                            dst[j] += sign * gv;
                        }
                    }
                });
            })),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_matches_spec_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);

        let pos = tape.leaf(Tensor::new(vec![3], vec![0.5, 1.0, 7.0]).unwrap());
        let y = tape.relu(pos);
        assert_eq!(tape.value(y).data(), &[0.5, 1.0, 7.0]);
    }

    #[test]
    fn relu_gradient_is_indicator_of_positive() {
        let mut tape = Tape::<f64>::new();
        let p = tape.register_param("x", Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
        let x = tape.param(p);
        let y = tape.relu(x);
        let s = tape.sum_all(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.param_grad(p).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn add_rejects_shape_mismatch() {
        let mut tape = Tape::<f32>::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[3, 2]));
        let err = tape.add(a, b).unwrap_err();
        assert!(err.to_string().contains("[2, 3]"));
    }

    #[test]
    fn clamp_blocks_gradient_outside_range() {
        let mut tape = Tape::<f64>::new();
        let p = tape.register_param("x", Tensor::new(vec![3], vec![-2.0, 0.3, 2.0]).unwrap());
        let x = tape.param(p);
        let y = tape.clamp(x, 0.0, 1.0);
        assert_eq!(tape.value(y).data(), &[0.0, 0.3, 1.0]);
        let s = tape.sum_all(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.param_grad(p).data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn grad_reverse_negates_gradient() {
        let mut tape = Tape::<f64>::new();
        let p = tape.register_param("x", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let x = tape.param(p);
        let r = tape.grad_reverse(x);
        assert_eq!(tape.value(r).data(), &[1.0, 2.0]);
        let s = tape.sum_all(r);
        tape.backward(s).unwrap();
        assert_eq!(tape.param_grad(p).data(), &[-1.0, -1.0]);
    }
}
