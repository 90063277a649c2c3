//! Row and property metrics over alignment outcomes, plus aggregation of
//! expert error annotations.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::align::{AlignmentOutcome, FieldAgreement};
use crate::schema::{ExtractionSchema, VarianceClass};

/// Marker printed where a ratio has a zero denominator.
pub const NO_MATCH: &str = "no match";

#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error("annotations CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("annotations CSV line {line}: {message}")]
    Annotation { line: u64, message: String },
    #[error("annotation refers to {kind} row `{row_id}` of `{doc_id}`, which is not in the alignment")]
    Dangling {
        doc_id: String,
        row_id: String,
        kind: RowKind,
    },
    #[error("annotation for `{row_id}` of `{doc_id}`: {message}")]
    Inconsistent {
        doc_id: String,
        row_id: String,
        message: String,
    },
}

/// A proportion that may be undefined.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Ratio(pub Option<f64>);

impl Ratio {
    pub fn of(numerator: usize, denominator: usize) -> Self {
        if denominator == 0 {
            Ratio(None)
        } else {
            Ratio(Some(numerator as f64 / denominator as f64))
        }
    }

    pub fn value(self) -> Option<f64> {
        self.0
    }

    /// Three decimals, or the no-match marker.
    pub fn to_fixed(self, decimals: usize) -> String {
        match self.0 {
            Some(v) => format!("{v:.decimals$}"),
            None => NO_MATCH.into(),
        }
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_fixed(3))
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            Some(v) => s.serialize_f64(v),
            None => s.serialize_str(NO_MATCH),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RowCounts {
    pub matched: usize,
    pub missed: usize,
    pub hallucinated: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub recall: Ratio,
    pub precision: Ratio,
    pub agree: usize,
    pub gold_populated: usize,
    pub extracted_populated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub run_id: String,
    pub matched: usize,
    pub missed: usize,
    pub hallucinated: usize,
    pub recall: Ratio,
    pub precision: Ratio,
    pub per_class: BTreeMap<VarianceClass, ClassMetrics>,
    pub per_paper: BTreeMap<String, RowCounts>,
}

/// recall = matched / (matched + missed); precision = matched / (matched +
/// hallucinated). `per_class` is left empty; see [`metrics_report`].
pub fn row_metrics(run_id: &str, outcomes: &[AlignmentOutcome]) -> MetricsReport {
    let mut per_paper = BTreeMap::new();
    let mut total = RowCounts::default();
    for o in outcomes {
        let c = per_paper.entry(o.doc_id.clone()).or_insert_with(RowCounts::default);
        c.matched += o.pairs.len();
        c.missed += o.missed_gold.len();
        c.hallucinated += o.hallucinated.len();
        total.matched += o.pairs.len();
        total.missed += o.missed_gold.len();
        total.hallucinated += o.hallucinated.len();
    }
    MetricsReport {
        run_id: run_id.to_string(),
        matched: total.matched,
        missed: total.missed,
        hallucinated: total.hallucinated,
        recall: Ratio::of(total.matched, total.matched + total.missed),
        precision: Ratio::of(total.matched, total.matched + total.hallucinated),
        per_class: BTreeMap::new(),
        per_paper,
    }
}

/// Cell-level recall and precision per variance class, over matched pairs
/// only and leaving out the required match fields. Every class that has a
/// non-required field in the schema gets an entry.
pub fn property_metrics(
    outcomes: &[AlignmentOutcome],
    schema: &ExtractionSchema,
) -> BTreeMap<VarianceClass, ClassMetrics> {
    let class_of: HashMap<&str, VarianceClass> = schema
        .fields
        .iter()
        .filter(|f| !f.required_for_match)
        .map(|f| (f.name.as_str(), f.variance_class))
        .collect();
    let mut out: BTreeMap<VarianceClass, ClassMetrics> =
        class_of.values().map(|c| (*c, ClassMetrics::default())).collect();
    for pair in outcomes.iter().flat_map(|o| &o.pairs) {
        for (field, agreement) in &pair.field_agreements {
            let Some(class) = class_of.get(field.as_str()) else {
                continue;
            };
            let m = out.get_mut(class).expect("class entry");
            let (a, g, e) = match agreement {
                FieldAgreement::Agree => (1, 1, 1),
                FieldAgreement::Disagree => (0, 1, 1),
                FieldAgreement::GoldMissing => (0, 0, 1),
                FieldAgreement::ExtractedMissing => (0, 1, 0),
                FieldAgreement::BothMissing => (0, 0, 0),
            };
            m.agree += a;
            m.gold_populated += g;
            m.extracted_populated += e;
        }
    }
    for m in out.values_mut() {
        m.recall = Ratio::of(m.agree, m.gold_populated);
        m.precision = Ratio::of(m.agree, m.extracted_populated);
    }
    out
}

pub fn metrics_report(
    run_id: &str,
    outcomes: &[AlignmentOutcome],
    schema: &ExtractionSchema,
) -> MetricsReport {
    MetricsReport {
        per_class: property_metrics(outcomes, schema),
        ..row_metrics(run_id, outcomes)
    }
}

macro_rules! vocabulary {
    ($name:ident { $($variant:ident => $token:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $token),+
                }
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                let t = s.trim().to_ascii_lowercase();
                $name::ALL
                    .iter()
                    .copied()
                    .find(|v| v.as_str() == t)
                    .ok_or_else(|| {
                        let allowed: Vec<&str> = $name::ALL.iter().map(|v| v.as_str()).collect();
                        format!("`{s}` is not one of {}", allowed.join(", "))
                    })
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

vocabulary!(RowKind {
    Gold => "gold",
    Extracted => "extracted",
});

vocabulary!(DataFormat {
    Table => "table",
    Figure => "figure",
    Narrative => "narrative",
    Calculated => "calculated",
    Other => "other",
});

vocabulary!(FailureReason {
    XmlParsing => "xml_parsing",
    Figure => "figure",
    DatasetError => "dataset_error",
    Comprehension => "comprehension",
    UnitConversion => "unit_conversion",
    Confusion => "confusion",
    SecondarySource => "secondary_source",
    Alignment => "alignment",
    None => "none",
});

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ErrorAnnotation {
    pub doc_id: String,
    pub row_id: String,
    pub row_kind: RowKind,
    pub data_format: DataFormat,
    /// Absent when the annotator left the reason blank.
    pub failure_reason: Option<FailureReason>,
    pub annotator: String,
}

#[derive(Deserialize)]
struct RawAnnotation {
    doc_id: String,
    row_id: String,
    row_kind: String,
    data_format: String,
    failure_reason: String,
    annotator: String,
}

pub fn load_annotations(csv_text: &str) -> Result<Vec<ErrorAnnotation>, EvaluateError> {
    if csv_text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(csv_text.as_bytes());
    let mut out = Vec::new();
    for row in reader.deserialize::<RawAnnotation>() {
        let raw = row?;
        let line = out.len() as u64 + 2;
        let bad = |message: String| EvaluateError::Annotation { line, message };
        if raw.doc_id.is_empty() || raw.row_id.is_empty() {
            return Err(bad("doc_id and row_id are required".into()));
        }
        out.push(ErrorAnnotation {
            row_kind: raw.row_kind.parse().map_err(|m| bad(format!("row_kind {m}")))?,
            data_format: raw.data_format.parse().map_err(|m| bad(format!("data_format {m}")))?,
            failure_reason: if raw.failure_reason.is_empty() {
                None
            } else {
                Some(raw.failure_reason.parse().map_err(|m| bad(format!("failure_reason {m}")))?)
            },
            doc_id: raw.doc_id,
            row_id: raw.row_id,
            annotator: raw.annotator,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FormatShare {
    pub data_format: DataFormat,
    pub total: usize,
    pub matched: usize,
    pub missed: usize,
    pub proportion: Ratio,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReasonShare {
    pub failure_reason: FailureReason,
    pub count: usize,
    pub proportion: Ratio,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Breakdowns {
    pub annotated_gold: usize,
    pub matched_gold: usize,
    pub matched_share: Ratio,
    /// Every data format, over annotated gold rows.
    pub formats: Vec<FormatShare>,
    /// Reasons given for missed gold rows.
    pub missed_reasons: Vec<ReasonShare>,
    /// Reasons given for hallucinated extracted rows.
    pub hallucinated_reasons: Vec<ReasonShare>,
}

fn reason_shares(counts: &BTreeMap<FailureReason, usize>) -> Vec<ReasonShare> {
    let total: usize = counts.values().sum();
    FailureReason::ALL
        .iter()
        .filter(|r| **r != FailureReason::None)
        .map(|r| {
            let count = counts.get(r).copied().unwrap_or(0);
            ReasonShare {
                failure_reason: *r,
                count,
                proportion: Ratio::of(count, total),
            }
        })
        .collect()
}

/// Format and failure-reason distributions of annotated rows. Every
/// annotation must name a row of the alignment, and its reason must be
/// `none` exactly when the row was matched (blank reasons are not checked).
pub fn breakdowns(
    annotations: &[ErrorAnnotation],
    outcomes: &[AlignmentOutcome],
) -> Result<Breakdowns, EvaluateError> {
    let mut matched_rows: HashMap<(RowKind, &str, &str), bool> = HashMap::new();
    for o in outcomes {
        let doc = o.doc_id.as_str();
        for p in &o.pairs {
            matched_rows.insert((RowKind::Gold, doc, &p.gold_id), true);
            matched_rows.insert((RowKind::Extracted, doc, &p.extracted_id), true);
        }
        for g in &o.missed_gold {
            matched_rows.insert((RowKind::Gold, doc, g), false);
        }
        for e in &o.hallucinated {
            matched_rows.insert((RowKind::Extracted, doc, e), false);
        }
    }

    let mut formats: BTreeMap<DataFormat, (usize, usize)> = BTreeMap::new();
    let mut missed_reasons = BTreeMap::new();
    let mut hallucinated_reasons = BTreeMap::new();
    for a in annotations {
        let matched = *matched_rows
            .get(&(a.row_kind, a.doc_id.as_str(), a.row_id.as_str()))
            .ok_or_else(|| EvaluateError::Dangling {
                doc_id: a.doc_id.clone(),
                row_id: a.row_id.clone(),
                kind: a.row_kind,
            })?;
        if let Some(reason) = a.failure_reason {
            if (reason == FailureReason::None) != matched {
                return Err(EvaluateError::Inconsistent {
                    doc_id: a.doc_id.clone(),
                    row_id: a.row_id.clone(),
                    message: if matched {
                        format!("matched row has failure reason `{reason}`")
                    } else {
                        "unmatched row has failure reason `none`".into()
                    },
                });
            }
        }
        match (a.row_kind, matched) {
            (RowKind::Gold, _) => {
                let e = formats.entry(a.data_format).or_default();
                if matched {
                    e.0 += 1;
                } else {
                    e.1 += 1;
                }
                if let (false, Some(r)) = (matched, a.failure_reason) {
                    *missed_reasons.entry(r).or_insert(0) += 1;
                }
            }
            (RowKind::Extracted, false) => {
                if let Some(r) = a.failure_reason {
                    *hallucinated_reasons.entry(r).or_insert(0) += 1;
                }
            }
            (RowKind::Extracted, true) => {}
        }
    }

    let annotated_gold: usize = formats.values().map(|(m, x)| m + x).sum();
    let matched_gold: usize = formats.values().map(|(m, _)| m).sum();
    Ok(Breakdowns {
        annotated_gold,
        matched_gold,
        matched_share: Ratio::of(matched_gold, annotated_gold),
        formats: DataFormat::ALL
            .iter()
            .map(|f| {
                let (matched, missed) = formats.get(f).copied().unwrap_or((0, 0));
                FormatShare {
                    data_format: *f,
                    total: matched + missed,
                    matched,
                    missed,
                    proportion: Ratio::of(matched + missed, annotated_gold),
                }
            })
            .collect(),
        missed_reasons: reason_shares(&missed_reasons),
        hallucinated_reasons: reason_shares(&hallucinated_reasons),
    })
}

fn csv_string(rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).expect("in-memory CSV write");
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV flush")).expect("UTF-8 CSV")
}

/// One row per run variant: Method, Matched, Recall, Hallucinated, Precision.
pub fn summary_csv(rows: &[(&str, &MetricsReport)]) -> String {
    let mut out = vec![["Method", "Matched", "Recall", "Hallucinated", "Precision"]
        .map(String::from)
        .to_vec()];
    for (method, r) in rows {
        out.push(vec![
            method.to_string(),
            r.matched.to_string(),
            r.recall.to_string(),
            r.hallucinated.to_string(),
            r.precision.to_string(),
        ]);
    }
    csv_string(out)
}

pub fn property_csv(report: &MetricsReport) -> String {
    let mut out = vec![vec!["Class".to_string(), "Recall".into(), "Precision".into()]];
    for (class, m) in &report.per_class {
        out.push(vec![class.as_str().into(), m.recall.to_string(), m.precision.to_string()]);
    }
    csv_string(out)
}

pub fn format_breakdown_csv(b: &Breakdowns) -> String {
    let mut out = vec![["data_format", "total", "matched", "missed", "proportion"]
        .map(String::from)
        .to_vec()];
    for f in &b.formats {
        out.push(vec![
            f.data_format.as_str().into(),
            f.total.to_string(),
            f.matched.to_string(),
            f.missed.to_string(),
            f.proportion.to_fixed(4),
        ]);
    }
    csv_string(out)
}

pub fn reason_breakdown_csv(b: &Breakdowns) -> String {
    let mut out = vec![["row_kind", "failure_reason", "count", "proportion"]
        .map(String::from)
        .to_vec()];
    for (kind, shares) in [("gold", &b.missed_reasons), ("extracted", &b.hallucinated_reasons)] {
        for s in shares {
            out.push(vec![
                kind.into(),
                s.failure_reason.as_str().into(),
                s.count.to_string(),
                s.proportion.to_fixed(4),
            ]);
        }
    }
    csv_string(out)
}
