use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tape, Tensor, Var};

/// Zero-padding policy for conv2d.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// No padding; output shrinks by kernel-1.
    Valid,
    /// Pad so the output covers ceil(extent / stride) positions.
    Same,
}

struct ConvGeom {
    b: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    stride: usize,
    pt: usize,
    pl: usize,
    oh: usize,
    ow: usize,
    batched: bool,
}

fn geometry(
    xshape: &[usize],
    wshape: &[usize],
    stride: usize,
    padding: Padding,
) -> Result<ConvGeom> {
    if stride == 0 {
        return Err(Error::invalid("conv2d", "stride 0".to_string()));
    }
    let (batched, b, h, w, cin) = match xshape {
        [h, w, c] => (false, 1, *h, *w, *c),
        [b, h, w, c] => (true, *b, *h, *w, *c),
        other => return Err(Error::shape("conv2d", format!("input rank {} ({other:?})", other.len()))),
    };
    let [kh, kw, wcin, cout] = match wshape {
        [a, b, c, d] => [*a, *b, *c, *d],
        other => return Err(Error::shape("conv2d", format!("kernel shape {other:?}, want kh x kw x cin x cout"))),
    };
    if wcin != cin {
        return Err(Error::shape("conv2d", format!("input channels {cin} vs kernel channels {wcin}")));
    }
    let (pt, pl, oh, ow) = match padding {
        Padding::Valid => {
            if kh > h || kw > w {
                return Err(Error::shape(
                    "conv2d",
                    format!("kernel {kh}x{kw} exceeds input {h}x{w} without padding"),
                ));
            }
            (0, 0, (h - kh) / stride + 1, (w - kw) / stride + 1)
        }
        Padding::Same => {
            let oh = h.div_ceil(stride);
            let ow = w.div_ceil(stride);
            let pad_h = ((oh - 1) * stride + kh).saturating_sub(h);
            let pad_w = ((ow - 1) * stride + kw).saturating_sub(w);
            if kh > h + pad_h || kw > w + pad_w {
                return Err(Error::shape(
                    "conv2d",
                    format!("kernel {kh}x{kw} exceeds padded input {}x{}", h + pad_h, w + pad_w),
                ));
            }
            (pad_h / 2, pad_w / 2, oh, ow)
        }
    };
    Ok(ConvGeom { b, h, w, cin, kh, kw, cout, stride, pt, pl, oh, ow, batched })
}

/// Lowered patch matrix for one image: (oh*ow) rows by (kh*kw*cin) columns.
fn im2col<E: Scalar>(g: &ConvGeom, img: &[E], col: &mut [E]) {
    let patch = g.kh * g.kw * g.cin;
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = &mut col[(oy * g.ow + ox) * patch..(oy * g.ow + ox + 1) * patch];
            let mut i = 0;
            for ky in 0..g.kh {
                let iy = (oy * g.stride + ky) as isize - g.pt as isize;
                for kx in 0..g.kw {
                    let ix = (ox * g.stride + kx) as isize - g.pl as isize;
                    let inside = iy >= 0 && (iy as usize) < g.h && ix >= 0 && (ix as usize) < g.w;
                    if inside {
                        let off = (iy as usize * g.w + ix as usize) * g.cin;
                        row[i..i + g.cin].copy_from_slice(&img[off..off + g.cin]);
                    } else {
                        row[i..i + g.cin].iter_mut().for_each(|v| *v = E::zero());
                    }
                    i += g.cin;
                }
            }
        }
    }
}

impl<E: Scalar> Tape<E> {
    /// 2-d cross-correlation with zero padding over the spatial plane.
    ///
    /// `x` is H×W×Cin or B×H×W×Cin; `w` is kh×kw×Cin×Cout.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: Padding) -> Result<Var> {
        let xv = self.value(x).clone();
        let wv = self.value(w).clone();
        let g = geometry(xv.shape(), wv.shape(), stride, padding)?;
        let patch = g.kh * g.kw * g.cin;
        let img_len = g.h * g.w * g.cin;
        let out_img = g.oh * g.ow * g.cout;

        let mut data = vec![E::zero(); g.b * out_img];
        let forward_one = |img: &[E], out: &mut [E]| {
            let mut col = vec![E::zero(); g.oh * g.ow * patch];
            im2col(&g, img, &mut col);
            super::linalg::gemm(g.oh * g.ow, patch, g.cout, &col, wv.data(), out);
        };
        if g.b > 1 {
            data.par_chunks_mut(out_img)
                .zip(xv.data().par_chunks(img_len))
                .for_each(|(out, img)| forward_one(img, out));
        } else {
            forward_one(xv.data(), &mut data);
        }

        let out_shape = if g.batched {
            vec![g.b, g.oh, g.ow, g.cout]
        } else {
            vec![g.oh, g.ow, g.cout]
        };
        let out = Tensor::new(out_shape, data)?;
        let xshape = xv.shape().to_vec();
        let wshape = wv.shape().to_vec();
        Ok(self.push(
            out,
            Some(Box::new(move |gy, buf| {
                // Input gradient: per image, col-space gradient then scatter.
                buf.accum_map(x, &xshape, |gx| {
                    let back_one = |gy_img: &[E], gx_img: &mut [E]| {
                        let mut gcol = vec![E::zero(); g.oh * g.ow * patch];
                        super::linalg::gemm_nt(g.oh * g.ow, g.cout, patch, gy_img, wv.data(), &mut gcol);
                        for oy in 0..g.oh {
                            for ox in 0..g.ow {
                                let row = &gcol[(oy * g.ow + ox) * patch..(oy * g.ow + ox + 1) * patch];
                                let mut i = 0;
                                for ky in 0..g.kh {
                                    let iy = (oy * g.stride + ky) as isize - g.pt as isize;
                                    for kx in 0..g.kw {
                                        let ix = (ox * g.stride + kx) as isize - g.pl as isize;
                                        if iy >= 0 && (iy as usize) < g.h && ix >= 0 && (ix as usize) < g.w {
                                            let off = (iy as usize * g.w + ix as usize) * g.cin;
                                            for (d, &v) in gx_img[off..off + g.cin].iter_mut().zip(&row[i..i + g.cin]) {
                                                *d += v;
                                            }
                                        }
                                        i += g.cin;
                                    }
                                }
                            }
                        }
                    };
                    if g.b > 1 {
                        gx.par_chunks_mut(img_len)
                            .zip(gy.data().par_chunks(out_img))
                            .for_each(|(gx_img, gy_img)| back_one(gy_img, gx_img));
                    } else {
                        back_one(gy.data(), gx);
                    }
                });
                // Weight gradient: parallel over patch rows, serial over the
                // batch inside each row so accumulation order is fixed.
                buf.accum_map(w, &wshape, |gw| {
                    let xdata = xv.data();
                    let gydata = gy.data();
                    gw.par_chunks_mut(g.cout).enumerate().for_each(|(r, gwrow)| {
                        let ky = r / (g.kw * g.cin);
                        let kx = (r / g.cin) % g.kw;
                        let ic = r % g.cin;
                        for b in 0..g.b {
                            let img = &xdata[b * img_len..(b + 1) * img_len];
                            let gy_img = &gydata[b * out_img..(b + 1) * out_img];
                            for oy in 0..g.oh {
                                let iy = (oy * g.stride + ky) as isize - g.pt as isize;
                                if iy < 0 || iy as usize >= g.h {
                                    continue;
                                }
                                for ox in 0..g.ow {
                                    let ix = (ox * g.stride + kx) as isize - g.pl as isize;
                                    if ix < 0 || ix as usize >= g.w {
                                        continue;
                                    }
                                    let xval = img[(iy as usize * g.w + ix as usize) * g.cin + ic];
                                    let gy_row = &gy_img[(oy * g.ow + ox) * g.cout..(oy * g.ow + ox + 1) * g.cout];
                                    for (d, &gv) in gwrow.iter_mut().zip(gy_row) {
                                        *d += xval * gv;
                                    }
                                }
                            }
                        }
                    });
                });
            })),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_identity_kernel_preserves_input() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[4, 5, 1], |i| i as f64 * 0.3 - 2.0));
        let mut w = vec![0.0; 9];
        w[4] = 1.0; // center of 3x3
        let w = tape.leaf(Tensor::new(vec![3, 3, 1, 1], w).unwrap());
        let y = tape.conv2d(x, w, 1, Padding::Same).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[6, 6, 2]));
        let w = tape.leaf(Tensor::from_fn(&[3, 3, 2, 4], |i| (i as f64).sin()));
        let y = tape.conv2d(x, w, 1, Padding::Same).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn valid_2x2_kernel_matches_direct_summation() {
        let mut tape = Tape::<f64>::new();
        let xs = [0.5, -1.0, 2.0, 1.5, 0.0, -0.5, 3.0, 1.0, -2.0];
        let ws = [1.0, -1.0, 0.5, 2.0];
        let x = tape.leaf(Tensor::new(vec![3, 3, 1], xs.to_vec()).unwrap());
        let w = tape.leaf(Tensor::new(vec![2, 2, 1, 1], ws.to_vec()).unwrap());
        let y = tape.conv2d(x, w, 1, Padding::Valid).unwrap();
        assert_eq!(tape.shape(y), &[2, 2, 1]);
        for oy in 0..2 {
            for ox in 0..2 {
                let mut want = 0.0;
                for ky in 0..2 {
                    for kx in 0..2 {
                        want += xs[(oy + ky) * 3 + ox + kx] * ws[ky * 2 + kx];
                    }
                }
                let got = tape.value(y).data()[oy * 2 + ox];
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stride_zero_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[3, 3, 1]));
        let w = tape.leaf(Tensor::zeros(&[2, 2, 1, 1]));
        assert!(tape.conv2d(x, w, 0, Padding::Valid).is_err());
    }

    #[test]
    fn oversized_kernel_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[3, 3, 1]));
        let w = tape.leaf(Tensor::zeros(&[4, 4, 1, 1]));
        assert!(tape.conv2d(x, w, 1, Padding::Valid).is_err());
    }

    #[test]
    fn batched_matches_per_image() {
        let mut tape = Tape::<f64>::new();
        let imgs = Tensor::from_fn(&[3, 5, 5, 2], |i| ((i * 37) % 11) as f64 - 5.0);
        let kernel = Tensor::from_fn(&[3, 3, 2, 3], |i| ((i * 13) % 7) as f64 * 0.25 - 0.75);
        let xb = tape.leaf(imgs.clone());
        let wv = tape.leaf(kernel.clone());
        let yb = tape.conv2d(xb, wv, 1, Padding::Valid).unwrap();
        for b in 0..3 {
            let img = Tensor::new(
                vec![5, 5, 2],
                imgs.data()[b * 50..(b + 1) * 50].to_vec(),
            )
            .unwrap();
            let x1 = tape.leaf(img);
            let w1 = tape.leaf(kernel.clone());
            let y1 = tape.conv2d(x1, w1, 1, Padding::Valid).unwrap();
            let per = tape.value(y1).data();
            let batch = &tape.value(yb).data()[b * 27..(b + 1) * 27];
            assert_eq!(per, batch);
        }
    }
}
