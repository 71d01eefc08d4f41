//! Input encoding for the MLP field kind: a frequency encoding of position
//! (raw coordinate plus sin/cos at octave frequencies) with the raw unit
//! direction appended. Directions are left unencoded.

use super::MLP_POS_OCTAVES;

pub(super) fn input_dim() -> usize {
    3 + 3 * 2 * MLP_POS_OCTAVES + 3
}

pub(super) fn encode_inputs(positions: &[[f64; 3]], view_dirs: &[[f64; 3]]) -> Vec<f64> {
    let dim = input_dim();
    let mut out = vec![0.0; positions.len() * dim];
    for (row, (p, d)) in positions.iter().zip(view_dirs).enumerate() {
        let dst = &mut out[row * dim..(row + 1) * dim];
        dst[..3].copy_from_slice(p);
        let mut k = 3;
        for octave in 0..MLP_POS_OCTAVES {
            let freq = (1u64 << octave) as f64 * std::f64::consts::PI;
            for axis in 0..3 {
                let x = p[axis] * freq;
                dst[k] = x.sin();
                dst[k + 1] = x.cos();
                k += 2;
            }
        }
        dst[k..k + 3].copy_from_slice(d);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_shape_and_direction_tail() {
        let e = encode_inputs(&[[0.0, 0.0, 0.0]], &[[0.2, 0.3, -0.9]]);
        assert_eq!(e.len(), input_dim());
        // Zero position: raw zeros, all sines zero, all cosines one.
        assert_eq!(&e[..3], &[0.0, 0.0, 0.0]);
        for octave in 0..MLP_POS_OCTAVES {
            for axis in 0..3 {
                let k = 3 + (octave * 3 + axis) * 2;
                assert_eq!(e[k], 0.0);
                assert_eq!(e[k + 1], 1.0);
            }
        }
        assert_eq!(&e[input_dim() - 3..], &[0.2, 0.3, -0.9]);
    }
}
