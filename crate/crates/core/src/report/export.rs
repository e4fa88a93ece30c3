//! Fine-tuning corpus built by replicating each prompt once per completion
//! draw, so completion frequencies track the target distribution.

use serde::{Deserialize, Serialize};

use crate::corpus::ChoiceDistribution;

use super::ReportError;

pub const DEFAULT_REPLICATION: u32 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetunePair {
    pub prompt: String,
    pub completion: String,
}

/// Apportions `total` units over `probs` by largest remainder. Ties in the
/// remainder go to the lower index.
pub fn largest_remainder(probs: &[f64], total: u32) -> Vec<u32> {
    let quotas: Vec<f64> = probs.iter().map(|&p| p * total as f64).collect();
    let mut counts: Vec<u32> = quotas.iter().map(|q| q.floor() as u32).collect();
    let assigned: u32 = counts.iter().sum();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned) as usize) {
        counts[i] += 1;
    }
    counts
}

/// `replication` pairs per record, split over `tokens` (one per choice label)
/// in proportion to the record's distribution.
pub fn export_finetune(
    records: &[(String, ChoiceDistribution)],
    tokens: &[String],
    replication: u32,
) -> Result<Vec<FinetunePair>, ReportError> {
    if replication == 0 {
        return Err(ReportError::Config("replication must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(records.len() * replication as usize);
    for (prompt, dist) in records {
        if dist.len() != tokens.len() {
            return Err(ReportError::Config(format!(
                "distribution has {} choices but {} completion tokens were given",
                dist.len(),
                tokens.len()
            )));
        }
        for (count, token) in largest_remainder(dist.probs(), replication).into_iter().zip(tokens) {
            for _ in 0..count {
                out.push(FinetunePair { prompt: prompt.clone(), completion: token.clone() });
            }
        }
    }
    Ok(out)
}

pub fn write_finetune<W: std::io::Write>(mut writer: W, pairs: &[FinetunePair]) -> std::io::Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut writer, p)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
