//! Packet loss to object-detection rate mapping.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::QocError;

/// How packet loss is distributed over a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Loss spread evenly over all packets.
    Uniform,
    /// Loss concentrated on differential-frame packets.
    Differential,
}

impl FromStr for Strategy {
    type Err = QocError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(Strategy::Uniform),
            "differential" | "selective" => Ok(Strategy::Differential),
            other => Err(QocError::Table(format!("unknown strategy {other:?}"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Uniform => "uniform",
            Strategy::Differential => "differential",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub loss_percent: f64,
    pub uniform: f64,
    pub differential: f64,
}

impl DetectionRow {
    fn rate(&self, strategy: Strategy) -> f64 {
        match strategy {
            Strategy::Uniform => self.uniform,
            Strategy::Differential => self.differential,
        }
    }
}

/// Object detection rate as a function of packet loss, for both loss strategies.
///
/// Rows are sorted by strictly increasing loss; each detection column is
/// nonincreasing and the differential column dominates the uniform one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionTable {
    rows: Vec<DetectionRow>,
}

impl Default for DetectionTable {
    fn default() -> Self {
        Self::builtin()
    }
}

impl DetectionTable {
    /// The measured SURF detection rates at 0.5, 1, 2 and 5 % loss.
    pub fn builtin() -> Self {
        let row = |loss_percent, uniform, differential| DetectionRow {
            loss_percent,
            uniform,
            differential,
        };
        DetectionTable {
            rows: vec![
                row(0.5, 0.95, 0.99),
                row(1.0, 0.84, 0.96),
                row(2.0, 0.46, 0.74),
                row(5.0, 0.1, 0.4),
            ],
        }
    }

    pub fn new(rows: Vec<DetectionRow>) -> Result<Self, QocError> {
        if rows.is_empty() {
            return Err(QocError::Table("table has no rows".into()));
        }
        for r in &rows {
            let finite = [r.loss_percent, r.uniform, r.differential]
                .iter()
                .all(|v| v.is_finite());
            if !finite || r.loss_percent < 0.0 {
                return Err(QocError::Table(format!("bad row {r:?}")));
            }
            if !(0.0..=1.0).contains(&r.uniform) || !(0.0..=1.0).contains(&r.differential) {
                return Err(QocError::Table(format!("detection outside [0,1] in {r:?}")));
            }
            if r.differential < r.uniform {
                return Err(QocError::Table(format!(
                    "differential below uniform at {}%",
                    r.loss_percent
                )));
            }
        }
        for w in rows.windows(2) {
            if w[1].loss_percent <= w[0].loss_percent {
                return Err(QocError::Table("loss column must strictly increase".into()));
            }
            if w[1].uniform > w[0].uniform || w[1].differential > w[0].differential {
                return Err(QocError::Table(format!(
                    "detection increases between {}% and {}%",
                    w[0].loss_percent, w[1].loss_percent
                )));
            }
        }
        Ok(DetectionTable { rows })
    }

    /// Parse whitespace- or comma-separated columns `loss_percent uniform differential`.
    /// Blank lines, `#` comments and a non-numeric header line are skipped.
    pub fn parse(text: &str) -> Result<Self, QocError> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|f| !f.is_empty())
                .collect();
            let nums: Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
            match nums {
                Ok(v) if v.len() == 3 => rows.push(DetectionRow {
                    loss_percent: v[0],
                    uniform: v[1],
                    differential: v[2],
                }),
                Err(_) if rows.is_empty() => continue,
                _ => {
                    return Err(QocError::Table(format!(
                        "line {}: expected three numeric columns",
                        lineno + 1
                    )))
                }
            }
        }
        Self::new(rows)
    }

    pub fn load(path: &Path) -> Result<Self, QocError> {
        let text = std::fs::read_to_string(path).map_err(|e| QocError::Table(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn rows(&self) -> &[DetectionRow] {
        &self.rows
    }

    /// Detection rate with no tolerated loss, taken as the first row.
    pub fn zero_loss_detection(&self, strategy: Strategy) -> f64 {
        self.rows[0].rate(strategy)
    }

    /// Detection rate at `loss_percent`: exact at rows, linear between them,
    /// clamped to the end rows outside the table range.
    pub fn detection(&self, loss_percent: f64, strategy: Strategy) -> f64 {
        let first = &self.rows[0];
        let last = &self.rows[self.rows.len() - 1];
        if loss_percent <= first.loss_percent {
            return first.rate(strategy);
        }
        if loss_percent >= last.loss_percent {
            return last.rate(strategy);
        }
        let i = self.rows.partition_point(|r| r.loss_percent <= loss_percent);
        let (a, b) = (&self.rows[i - 1], &self.rows[i]);
        if a.loss_percent == loss_percent {
            return a.rate(strategy);
        }
        let t = (loss_percent - a.loss_percent) / (b.loss_percent - a.loss_percent);
        a.rate(strategy) + t * (b.rate(strategy) - a.rate(strategy))
    }

    /// Largest loss percentage whose detection rate is still at least `threshold`.
    ///
    /// A threshold at or below the last row is met by any loss (the table is
    /// clamped), which is reported as 100 %.
    pub fn max_tolerable_loss(&self, threshold: f64, strategy: Strategy) -> Result<f64, QocError> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(QocError::InvalidThreshold(threshold));
        }
        let best = self.zero_loss_detection(strategy);
        if threshold > best {
            return Err(QocError::Infeasible {
                threshold,
                strategy,
                best,
            });
        }
        if threshold <= self.rows[self.rows.len() - 1].rate(strategy) {
            return Ok(100.0);
        }
        // Walk to the segment where detection falls below the threshold.
        for w in self.rows.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let (da, db) = (a.rate(strategy), b.rate(strategy));
            if db < threshold {
                let t = (da - threshold) / (da - db);
                return Ok(a.loss_percent + t * (b.loss_percent - a.loss_percent));
            }
        }
        unreachable!("threshold above the last row always crosses a segment")
    }
}

/// Free-function form of [`DetectionTable::detection`].
pub fn detection_lookup(loss_percent: f64, strategy: Strategy, table: &DetectionTable) -> f64 {
    table.detection(loss_percent, strategy)
}

/// Free-function form of [`DetectionTable::max_tolerable_loss`].
pub fn max_tolerable_loss(threshold: f64, strategy: Strategy, table: &DetectionTable) -> Result<f64, QocError> {
    table.max_tolerable_loss(threshold, strategy)
}
