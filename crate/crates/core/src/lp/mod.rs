//! Littlewood-Paley machinery: the dyadic filter bank, the blocks `Δ_j`,
//! the low-frequency cut-offs `S_j` and the Besov-type norms built on them.

mod norms;
mod partition;

pub use norms::{
    admissible, besov_from_blocks, besov_norm, besov_norm_family, block_norms,
    block_norms_family, chemin_lerner_from_blocks, chemin_lerner_norm, lp_norm,
    lp_norm_physical, time_norm, BesovParams,
};
pub use partition::{
    bump, profile, DyadicPartition, PartitionDiagnostics, ShellDiagnostics, RING_INNER,
    RING_OUTER,
};

use crate::error::Result;
use crate::field::SpectralField;

/// `Δ_j u`: every coefficient multiplied by the shell-`j` filter.
pub fn dyadic_block(u: &SpectralField, j: i32, partition: &DyadicPartition) -> Result<SpectralField> {
    let filter = partition.filter(j)?;
    let mut out = u.clone();
    out.apply_multiplier(|idx| filter[idx]);
    Ok(out)
}

/// `S_j u = Σ_{i ≤ j−1} Δ_i u` over the resolvable shells; zero for `j ≤ j_min`.
pub fn low_freq_sum(u: &SpectralField, j: i32, partition: &DyadicPartition) -> SpectralField {
    let top = (j - 1).min(partition.j_max());
    let mut weight = vec![0.0; u.grid().len()];
    for i in partition.j_min()..=top {
        let filter = partition.filter(i).expect("shell inside range");
        for (w, f) in weight.iter_mut().zip(filter) {
            *w += f;
        }
    }
    let mut out = u.clone();
    out.apply_multiplier(|idx| weight[idx]);
    out
}
