use crate::error::{Error, Result};
use crate::lattice::{Lattice3, Lut};

fn check_p(p: u32) -> Result<()> {
    if p == 1 || p == 2 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("TV exponent must be 1 or 2, got {p}")))
    }
}

/// Total variation of a node table: over every unordered pair of
/// axis-adjacent nodes `(i, j)`, `Σ_c |w_i,c − w_j,c|^p`. When `grad` is given
/// the derivative with respect to `data` is added to it.
pub fn tv_values(lattice: &Lattice3, k: usize, data: &[f64], p: u32, mut grad: Option<&mut [f64]>) -> Result<f64> {
    check_p(p)?;
    let d = lattice.d();
    if data.len() != lattice.node_count() * k {
        return Err(Error::DimensionMismatch(format!(
            "table of {} values for {} nodes × {k} channels",
            data.len(),
            lattice.node_count()
        )));
    }
    if let Some(g) = grad.as_deref() {
        if g.len() != data.len() {
            return Err(Error::DimensionMismatch("TV gradient buffer length".into()));
        }
    }
    let strides = [d * d, d, 1];
    let mut total = 0.0;
    for ix in 0..d {
        for iy in 0..d {
            for iz in 0..d {
                let i = lattice.flat_index(ix, iy, iz);
                let idx = [ix, iy, iz];
                for axis in 0..3 {
                    if idx[axis] + 1 >= d {
                        continue;
                    }
                    let j = i + strides[axis];
                    for c in 0..k {
                        let diff = data[i * k + c] - data[j * k + c];
                        let (v, dv) = if p == 1 {
                            (diff.abs(), if diff > 0.0 { 1.0 } else if diff < 0.0 { -1.0 } else { 0.0 })
                        } else {
                            (diff * diff, 2.0 * diff)
                        };
                        total += v;
                        if let Some(g) = grad.as_deref_mut() {
                            g[i * k + c] += dv;
                            g[j * k + c] -= dv;
                        }
                    }
                }
            }
        }
    }
    Ok(total)
}

/// Total-variation regularizer of a lookup table, see [`tv_values`].
pub fn tv_regularizer(table: &Lut, p: u32) -> Result<f64> {
    let data: Vec<f64> = table.data().iter().map(|&v| v as f64).collect();
    tv_values(table.lattice(), table.k(), &data, p, None)
}
