use super::Converted;
use crate::catalog::{DomainCatalog, DomainPair};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub speaker: String,
    pub emotion: String,
    pub pair: DomainPair,
    pub seen: bool,
    pub samples: usize,
    pub correct: usize,
    pub emotion_accuracy: f64,
    /// Mean similarity of the cell's samples toward the target speaker.
    pub speaker_similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub speakers: Vec<String>,
    pub cells: Vec<CellReport>,
    pub samples: usize,
    pub emotion_accuracy: f64,
    pub unseen_samples: usize,
    /// Accuracy over unseen target pairs; `None` when the set has none.
    pub unseen_emotion_accuracy: Option<f64>,
    /// Mean similarity toward the target speaker over all samples.
    pub speaker_similarity: f64,
    /// `[target speaker][reference speaker]` mean similarity over samples
    /// whose target speaker differs from their source speaker.
    pub cross_similarity: Vec<Vec<f64>>,
    pub cross_samples: Vec<usize>,
}

impl EvalReport {
    pub(super) fn build(
        label: &str,
        catalog: &DomainCatalog,
        set: &[Converted],
        acc: &BTreeMap<DomainPair, (usize, usize)>,
        sims: &[Vec<f64>],
    ) -> Self {
        let ns = catalog.num_speakers();
        let mut cell_sim: BTreeMap<DomainPair, f64> = BTreeMap::new();
        let mut cross = vec![vec![0.0; ns]; ns];
        let mut cross_n = vec![0usize; ns];
        for (c, s) in set.iter().zip(sims) {
            *cell_sim.entry(c.target).or_default() += s[c.target.speaker];
            if c.source.speaker != c.target.speaker {
                let t = c.target.speaker;
                cross_n[t] += 1;
                for (acc, v) in cross[t].iter_mut().zip(s) {
                    *acc += v;
                }
            }
        }
        for (row, &n) in cross.iter_mut().zip(&cross_n) {
            for v in row.iter_mut() {
                *v = if n == 0 { f64::NAN } else { *v / n as f64 };
            }
        }
        let cells: Vec<CellReport> = acc
            .iter()
            .map(|(&pair, &(correct, samples))| CellReport {
                speaker: catalog.speakers()[pair.speaker].clone(),
                emotion: catalog.emotions()[pair.emotion].clone(),
                pair,
                seen: catalog.is_seen(pair).unwrap_or(false),
                samples,
                correct,
                emotion_accuracy: correct as f64 / samples as f64,
                speaker_similarity: cell_sim[&pair] / samples as f64,
            })
            .collect();
        let ratio = |cells: &mut dyn Iterator<Item = &CellReport>| {
            let (c, n) = cells.fold((0, 0), |(c, n), r| (c + r.correct, n + r.samples));
            (c, n)
        };
        let (c_all, n_all) = ratio(&mut cells.iter());
        let (c_un, n_un) = ratio(&mut cells.iter().filter(|c| !c.seen));
        let sim_total: f64 = set.iter().zip(sims).map(|(c, s)| s[c.target.speaker]).sum();
        Self {
            label: label.to_string(),
            speakers: catalog.speakers().to_vec(),
            cells,
            samples: n_all,
            emotion_accuracy: c_all as f64 / n_all.max(1) as f64,
            unseen_samples: n_un,
            unseen_emotion_accuracy: (n_un > 0).then(|| c_un as f64 / n_un as f64),
            speaker_similarity: sim_total / set.len().max(1) as f64,
            cross_similarity: cross,
            cross_samples: cross_n,
        }
    }

    /// Whether, for every target speaker with cross-speaker samples, the
    /// similarity toward that speaker beats the similarity toward each other
    /// speaker.
    pub fn speaker_directional(&self) -> bool {
        self.cross_similarity
            .iter()
            .enumerate()
            .all(|(t, row)| self.cross_samples[t] == 0 || row.iter().enumerate().all(|(r, &v)| r == t || row[t] > v))
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "report: {}", self.label);
        let _ = writeln!(
            s,
            "{:<12} {:<12} {:<6} {:>7} {:>8} {:>8}",
            "speaker", "emotion", "seen", "samples", "emo_acc", "spk_sim"
        );
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{:<12} {:<12} {:<6} {:>7} {:>8.4} {:>8.4}",
                c.speaker,
                c.emotion,
                if c.seen { "yes" } else { "no" },
                c.samples,
                c.emotion_accuracy,
                c.speaker_similarity
            );
        }
        let _ = writeln!(
            s,
            "overall emotion accuracy  {:.4} ({} samples)",
            self.emotion_accuracy, self.samples
        );
        match self.unseen_emotion_accuracy {
            Some(a) => {
                let _ = writeln!(s, "unseen-pair accuracy      {a:.4} ({} samples)", self.unseen_samples);
            }
            None => {
                let _ = writeln!(s, "unseen-pair accuracy      n/a");
            }
        }
        let _ = writeln!(s, "speaker similarity        {:.4}", self.speaker_similarity);
        let _ = writeln!(s, "cross-speaker similarity (rows: target, columns: reference)");
        let _ = write!(s, "{:<12}", "");
        for name in &self.speakers {
            let _ = write!(s, " {name:>10}");
        }
        let _ = writeln!(s);
        for (name, row) in self.speakers.iter().zip(&self.cross_similarity) {
            let _ = write!(s, "{name:<12}");
            for v in row {
                let _ = write!(s, " {v:>10.4}");
            }
            let _ = writeln!(s);
        }
        s
    }

    /// One line per cell.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,speaker,emotion,seen,samples,correct,emotion_accuracy,speaker_similarity\n");
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{:?},{:?}",
                self.label,
                c.speaker,
                c.emotion,
                c.seen,
                c.samples,
                c.correct,
                c.emotion_accuracy,
                c.speaker_similarity
            );
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub report: EvalReport,
}

fn delta(v: f64, base: f64) -> String {
    format!("{:+.4}", v - base)
}

/// Side-by-side metrics; deltas are relative to the first row.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:>10} {:>9} {:>10} {:>9} {:>10} {:>9} {:>8}",
        "config", "unseen_acc", "delta", "emo_acc", "delta", "spk_sim", "delta", "samples"
    );
    let Some(base) = rows.first() else { return s };
    let b = &base.report;
    for r in rows {
        let p = &r.report;
        let un = p.unseen_emotion_accuracy.unwrap_or(f64::NAN);
        let _ = writeln!(
            s,
            "{:<12} {:>10.4} {:>9} {:>10.4} {:>9} {:>10.4} {:>9} {:>8}",
            r.name,
            un,
            delta(un, b.unseen_emotion_accuracy.unwrap_or(f64::NAN)),
            p.emotion_accuracy,
            delta(p.emotion_accuracy, b.emotion_accuracy),
            p.speaker_similarity,
            delta(p.speaker_similarity, b.speaker_similarity),
            p.samples
        );
    }
    s
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s =
        String::from("config,unseen_emotion_accuracy,unseen_samples,emotion_accuracy,speaker_similarity,samples\n");
    for r in rows {
        let p = &r.report;
        let _ = writeln!(
            s,
            "{},{:?},{},{:?},{:?},{}",
            r.name,
            p.unseen_emotion_accuracy.unwrap_or(f64::NAN),
            p.unseen_samples,
            p.emotion_accuracy,
            p.speaker_similarity,
            p.samples
        );
    }
    s
}
