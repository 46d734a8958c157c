//! Sinusoidal positional encoding of coordinates and directions.

/// Number of sinusoid frequencies per coordinate axis. Frequencies are the
/// powers of two `2^0 .. 2^(k-1)`; setting `include_raw_input` prepends the
/// raw coordinate itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodingConfig {
    pub position_frequencies: u32,
    pub direction_frequencies: u32,
    pub include_raw_input: bool,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig {
            position_frequencies: 6,
            direction_frequencies: 4,
            include_raw_input: true,
        }
    }
}

impl EncodingConfig {
    pub fn position_dim(&self) -> usize {
        encoded_len(3, self.position_frequencies, self.include_raw_input)
    }

    pub fn direction_dim(&self) -> usize {
        encoded_len(3, self.direction_frequencies, self.include_raw_input)
    }
}

/// Encoded dimension of a `d`-vector: `d * (2k + raw)`.
pub fn encoded_len(d: usize, k: u32, include_raw: bool) -> usize {
    d * (2 * k as usize + usize::from(include_raw))
}

/// Per component `x` emits `[x,] sin(2^0 x), cos(2^0 x), ..,
/// sin(2^(k-1) x), cos(2^(k-1) x)`, components concatenated in order.
/// Inputs are expected pre-normalized to roughly [-1, 1].
pub fn positional_encode(v: &[f64], k: u32, include_raw: bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(encoded_len(v.len(), k, include_raw));
    encode_into(v, k, include_raw, &mut out);
    out
}

/// Allocation-free variant used in the evaluation hot path.
pub fn encode_into(v: &[f64], k: u32, include_raw: bool, out: &mut Vec<f64>) {
    out.clear();
    for &x in v {
        if include_raw {
            out.push(x);
        }
        let mut scaled = x;
        for _ in 0..k {
            out.push(scaled.sin());
            out.push(scaled.cos());
            scaled *= 2.0;
        }
    }
}
