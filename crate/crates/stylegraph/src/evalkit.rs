//! Annotation aggregation and the time-deviation error (TDE) metric.
//!
//! Human (or fixture) annotators mark a start/end frame per observed
//! maneuver. Counting, per frame, how many annotators cover it yields a
//! probability mass over frames; its expectation is the consensus event
//! time. TDE is the gap in seconds between that expectation and the frame
//! at which the detector's SLE peaks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::AnalysisConfig;
use crate::error::{Error, Result};
use crate::io::{AgentId, TrajectorySet};
use crate::styles::{style_report, StyleKind};

/// Per-participant start/end frames for one style in one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    intervals: Vec<(u64, u64)>,
}

impl AnnotationSet {
    pub fn new(intervals: Vec<(u64, u64)>) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::Domain("annotation set needs at least one interval".into()));
        }
        for &(s, e) in &intervals {
            if s > e {
                return Err(Error::Domain(format!(
                    "annotation start {s} exceeds end {e}"
                )));
            }
        }
        Ok(Self { intervals })
    }

    pub fn intervals(&self) -> &[(u64, u64)] {
        &self.intervals
    }
}

/// Frame-indexed probability mass over the annotated span plus its
/// expectation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventDistribution {
    pub pmf: Vec<(u64, f64)>,
    pub expected_frame: f64,
    pub start: u64,
    pub end: u64,
}

/// Counts, per frame t in [min s_m, max e_m], the annotators whose interval
/// covers t; normalizes the counts into a probability mass and takes its
/// expectation. The expectation is computed in integer arithmetic
/// (Σ t·c_t / Σ c_t) so the worked examples come out exact.
pub fn aggregate_annotations(annotations: &AnnotationSet) -> Result<EventDistribution> {
    let start = annotations
        .intervals
        .iter()
        .map(|&(s, _)| s)
        .min()
        .expect("non-empty by construction");
    let end = annotations
        .intervals
        .iter()
        .map(|&(_, e)| e)
        .max()
        .expect("non-empty by construction");

    let mut counts: Vec<u64> = vec![0; (end - start + 1) as usize];
    for &(s, e) in &annotations.intervals {
        for t in s..=e {
            counts[(t - start) as usize] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    let weighted: u128 = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| (start + i as u64) as u128 * c as u128)
        .sum();
    let expected_frame = weighted as f64 / total as f64;
    let pmf = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| (start + i as u64, c as f64 / total as f64))
        .collect();
    Ok(EventDistribution {
        pmf,
        expected_frame,
        start,
        end,
    })
}

/// |t_SLE − 𝔼[T]| / f, in seconds.
pub fn tde_seconds(t_sle: f64, expected_frame: f64, frame_rate_hz: f64) -> Result<f64> {
    if !(frame_rate_hz > 0.0) {
        return Err(Error::Domain(format!(
            "frame rate must be positive, got {frame_rate_hz}"
        )));
    }
    Ok((t_sle - expected_frame).abs() / frame_rate_hz)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub style: StyleKind,
    pub t_sle: f64,
    pub expected_frame: f64,
    pub frame_rate_hz: f64,
    pub tde_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum EvalOutcome {
    Record(EvalRecord),
    Skipped { style: StyleKind, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub agent: AgentId,
    pub outcomes: Vec<EvalOutcome>,
    /// Mean TDE (seconds) per style over the recorded outcomes.
    pub mean_tde_by_style: BTreeMap<String, f64>,
}

/// Pairs the detector's per-style peak frames with the annotation-derived
/// expected frames for one subject agent. Styles whose SLE peak cannot be
/// produced (weaving without critical points) are skipped with a warning
/// record.
pub fn evaluate_episode(
    ts: &TrajectorySet,
    subject: &AgentId,
    annotations: &BTreeMap<StyleKind, AnnotationSet>,
    config: &AnalysisConfig,
) -> Result<EvalReport> {
    let report = style_report(ts, subject, config)?;
    let f = config.frame_rate_hz;

    let mut outcomes = Vec::new();
    for (style, ann) in annotations {
        let dist = aggregate_annotations(ann)?;
        let t_sle = match style {
            StyleKind::Overspeeding | StyleKind::Overtaking | StyleKind::SuddenLaneChange => {
                Some(report.channel(*style).expect("polynomial style").t_sle as f64)
            }
            StyleKind::Weaving => report.weaving.t_peak,
            StyleKind::Conservative => None,
        };
        match t_sle {
            Some(t) => {
                let tde = tde_seconds(t, dist.expected_frame, f)?;
                outcomes.push(EvalOutcome::Record(EvalRecord {
                    style: *style,
                    t_sle: t,
                    expected_frame: dist.expected_frame,
                    frame_rate_hz: f,
                    tde_seconds: tde,
                }));
            }
            None => outcomes.push(EvalOutcome::Skipped {
                style: *style,
                reason: match style {
                    StyleKind::Weaving => "no weaving critical points detected".into(),
                    _ => "style has no SLE peak to pair".into(),
                },
            }),
        }
    }

    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for outcome in &outcomes {
        if let EvalOutcome::Record(r) = outcome {
            let entry = sums.entry(r.style.as_str().to_owned()).or_insert((0.0, 0));
            entry.0 += r.tde_seconds;
            entry.1 += 1;
        }
    }
    let mean_tde_by_style = sums
        .into_iter()
        .map(|(style, (sum, n))| (style, sum / n as f64))
        .collect();

    Ok(EvalReport {
        agent: subject.clone(),
        outcomes,
        mean_tde_by_style,
    })
}

/// Parses the annotation fixture CSV: `participant,style,start_frame,end_frame`
/// (header optional). Each row is one participant's interval for one style.
pub fn parse_annotations_csv(text: &str) -> Result<BTreeMap<StyleKind, AnnotationSet>> {
    let mut by_style: BTreeMap<StyleKind, Vec<(u64, u64)>> = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if idx == 0 && fields.first() == Some(&"participant") {
            continue;
        }
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let style = StyleKind::parse(fields[1]).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let parse_frame = |s: &str| -> Result<u64> {
            s.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad frame {s:?}"),
            })
        };
        let s = parse_frame(fields[2])?;
        let e = parse_frame(fields[3])?;
        by_style.entry(style).or_default().push((s, e));
    }
    if by_style.is_empty() {
        return Err(Error::EmptyInput("no annotation rows".into()));
    }
    by_style
        .into_iter()
        .map(|(style, intervals)| Ok((style, AnnotationSet::new(intervals)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_annotator_is_uniform() {
        let ann = AnnotationSet::new(vec![(2, 4)]).unwrap();
        let dist = aggregate_annotations(&ann).unwrap();
        assert_eq!(dist.start, 2);
        assert_eq!(dist.end, 4);
        for (t, p) in &dist.pmf {
            assert!((2..=4).contains(t));
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(dist.expected_frame, 3.0);
    }

    #[test]
    fn two_annotator_worked_example() {
        // [2,4] and [3,5] → counts {2:1, 3:2, 4:2, 5:1}, 𝔼[T] = 21/6 = 3.5.
        let ann = AnnotationSet::new(vec![(2, 4), (3, 5)]).unwrap();
        let dist = aggregate_annotations(&ann).unwrap();
        let counts: Vec<f64> = dist.pmf.iter().map(|&(_, p)| p * 6.0).collect();
        assert_eq!(counts, vec![1.0, 2.0, 2.0, 1.0]);
        assert_eq!(dist.expected_frame, 3.5);
    }

    #[test]
    fn identical_annotators_match_single() {
        let one = aggregate_annotations(&AnnotationSet::new(vec![(10, 20)]).unwrap()).unwrap();
        let many =
            aggregate_annotations(&AnnotationSet::new(vec![(10, 20); 7]).unwrap()).unwrap();
        assert_eq!(one.pmf, many.pmf);
        assert_eq!(one.expected_frame, many.expected_frame);
    }

    #[test]
    fn pmf_sums_to_one_and_expectation_is_bracketed() {
        // Deterministic pseudo-random annotation sets.
        let mut state = 0x9E3779B97F4A7C15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for _ in 0..100 {
            let m = (next() % 9 + 1) as usize;
            let intervals: Vec<(u64, u64)> = (0..m)
                .map(|_| {
                    let s = next() % 200;
                    let len = next() % 40;
                    (s, s + len)
                })
                .collect();
            let ann = AnnotationSet::new(intervals).unwrap();
            let dist = aggregate_annotations(&ann).unwrap();
            let total: f64 = dist.pmf.iter().map(|&(_, p)| p).sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(dist.start as f64 <= dist.expected_frame);
            assert!(dist.expected_frame <= dist.end as f64);
        }
    }

    #[test]
    fn invalid_annotations_are_rejected() {
        assert!(matches!(AnnotationSet::new(vec![]), Err(Error::Domain(_))));
        assert!(matches!(
            AnnotationSet::new(vec![(5, 2)]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn tde_formula() {
        assert_eq!(tde_seconds(30.0, 30.0, 10.0).unwrap(), 0.0);
        assert_eq!(tde_seconds(30.0, 25.0, 10.0).unwrap(), 0.5);
        // Symmetric in the two time arguments.
        assert_eq!(
            tde_seconds(25.0, 30.0, 10.0).unwrap(),
            tde_seconds(30.0, 25.0, 10.0).unwrap()
        );
        // Scales inversely with the frame rate.
        assert_eq!(tde_seconds(30.0, 25.0, 5.0).unwrap(), 1.0);
        assert!(matches!(tde_seconds(1.0, 2.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn annotation_csv_round_trip() {
        let text = "participant,style,start_frame,end_frame\n\
                    1,overspeeding,20,40\n\
                    2,overspeeding,25,45\n\
                    1,weaving,10,80\n";
        let parsed = parse_annotations_csv(text).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(
            parsed[&StyleKind::Overspeeding].intervals(),
            &[(20, 40), (25, 45)]
        );
        assert_eq!(parsed[&StyleKind::Weaving].intervals(), &[(10, 80)]);
        assert!(matches!(
            parse_annotations_csv("1,overspeeding,20\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
