mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use sciextract::align::values_agree;
use sciextract::corpus::{load_gold, DocumentModel};
use sciextract::postprocess::{
    merge_chunk_records, parse_response, strip_fences, to_records, ExtractedRecord, PostprocessOptions, Provenance,
};
use sciextract::prompting::{render_exemplar, PromptMode};
use sciextract::{parse_lenient_json, CellValue, ExtractionSchema, FieldKind};

fn prov(chunk: Option<usize>) -> Provenance {
    Provenance {
        run_id: "t".into(),
        mode: if chunk.is_some() { PromptMode::Chunked } else { PromptMode::OneShot },
        chunk_index: chunk,
    }
}

fn empty_doc(doc_id: &str) -> DocumentModel {
    DocumentModel {
        doc_id: doc_id.into(),
        title: "t".into(),
        abstract_text: String::new(),
        sections: vec![],
        tables: vec![],
        year: None,
    }
}

/// Renders records as an exemplar, then reads the exemplar back as if it
/// were a model response.
fn round_trip(schema: &ExtractionSchema, records: &[ExtractedRecord]) -> Vec<ExtractedRecord> {
    let exemplar = render_exemplar(schema, &empty_doc("10.1/x"), records).unwrap();
    let (value, warnings) =
        parse_response(&exemplar.expected_output, "10.1/x", &prov(None), &PostprocessOptions::default()).unwrap();
    assert!(warnings.is_empty());
    let (back, warnings) =
        to_records(&value, schema, "10.1/x", &prov(None), &PostprocessOptions::default()).unwrap();
    assert!(warnings.is_empty(), "{warnings:?}");
    back
}

#[test]
fn sample_exemplar_rows_round_trip() {
    for name in ["mpea", "diffusion"] {
        let schema = ExtractionSchema::bundled(name).unwrap();
        let gold = load_gold(&common::read_fixture(&format!("golden/gold_{name}.csv")), &schema, false).unwrap();
        let records: Vec<ExtractedRecord> = gold.iter().map(|g| ExtractedRecord::from_gold(g, prov(None))).collect();
        let back = round_trip(&schema, &records);
        assert_eq!(back.len(), records.len());
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.cells, b.cells, "{name}");
        }
    }
}

#[test]
fn sample_outputs_parse_into_records() {
    let mpea = ExtractionSchema::mpea();
    let v = parse_lenient_json(common::lenient::MPEA_SAMPLE_OUTPUT).unwrap();
    let (r, w) = to_records(&v, &mpea, "d", &prov(None), &PostprocessOptions::default()).unwrap();
    assert!(w.is_empty());
    assert_eq!(r[0].cell("hardness"), &CellValue::number(1072.0, Some("HV")));
    assert_eq!(r[0].cell("BCC/FCC/other"), &CellValue::Text("other".into()));
    let diffusion = ExtractionSchema::diffusion();
    let v = parse_lenient_json(common::lenient::DIFFUSION_SAMPLE_OUTPUT).unwrap();
    let (r, _) = to_records(&v, &diffusion, "d", &prov(None), &PostprocessOptions::default()).unwrap();
    assert_eq!(r[0].cell("diffusivity"), &CellValue::number(1.35e-07, Some("m2/s")));
    assert!(r[0].cell("pressure").is_missing());
}

fn cell_strategy(kind: FieldKind, unit: Option<String>) -> BoxedStrategy<CellValue> {
    let value = match kind {
        FieldKind::Text => "[A-Za-z0-9+.()]{1,8}( [A-Za-z0-9]{1,5})?".prop_map(CellValue::Text).boxed(),
        FieldKind::Number => prop_oneof![
            (-1e6..1e6f64),
            (1e-15..1e-3f64),
            (-100i32..100).prop_map(f64::from),
        ]
        .prop_map(move |v| CellValue::Number { value: v, unit: unit.clone() })
        .boxed(),
    };
    prop_oneof![1 => Just(CellValue::Missing), 2 => value].boxed()
}

fn records_strategy(schema: ExtractionSchema) -> impl Strategy<Value = Vec<ExtractedRecord>> {
    let per_field: Vec<_> = schema.fields.iter().map(|f| cell_strategy(f.kind, f.unit.clone())).collect();
    let names: Vec<String> = schema.fields.iter().map(|f| f.name.clone()).collect();
    prop::collection::vec(per_field, 1..4).prop_map(move |rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, cells)| ExtractedRecord {
                record_id: format!("10.1/x::{i}"),
                doc_id: "10.1/x".into(),
                cells: names
                    .iter()
                    .cloned()
                    .zip(cells)
                    .filter(|(_, c)| !c.is_missing())
                    .collect::<BTreeMap<_, _>>(),
                provenance: prov(None),
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn exemplar_round_trip_mpea(records in records_strategy(ExtractionSchema::mpea())) {
        let back = round_trip(&ExtractionSchema::mpea(), &records);
        prop_assert_eq!(back, records);
    }

    #[test]
    fn exemplar_round_trip_diffusion(records in records_strategy(ExtractionSchema::diffusion())) {
        let back = round_trip(&ExtractionSchema::diffusion(), &records);
        prop_assert_eq!(back, records);
    }

    #[test]
    fn strip_fences_is_idempotent(parts in prop::collection::vec(
        prop::sample::select(vec!["```", "```json\n", "json", "\n", " ", "[1]", "{\"a\": 2}", "Here:", "`", "``"]),
        0..12,
    )) {
        let text: String = parts.concat();
        let once = strip_fences(&text);
        prop_assert_eq!(strip_fences(&once), once);
    }

    #[test]
    fn merge_is_idempotent_and_traceable(chunks in prop::collection::vec(
        records_strategy(ExtractionSchema::mpea()), 1..4,
    )) {
        let schema = ExtractionSchema::mpea();
        let chunks: Vec<Vec<ExtractedRecord>> = chunks
            .into_iter()
            .enumerate()
            .map(|(c, rs)| {
                rs.into_iter()
                    .enumerate()
                    .map(|(i, mut r)| {
                        r.record_id = format!("10.1/x::c{c}::{i}");
                        r.provenance = prov(Some(c));
                        r
                    })
                    .collect()
            })
            .collect();
        let (merged, _) = merge_chunk_records(&chunks, &schema, 1e-6);
        let total: usize = chunks.iter().map(Vec::len).sum();
        prop_assert!(merged.len() <= total);
        let (again, warnings) = merge_chunk_records(std::slice::from_ref(&merged), &schema, 1e-6);
        prop_assert_eq!(&again, &merged);
        prop_assert!(warnings.is_empty());
        for m in &merged {
            for (field, value) in &m.cells {
                let spec = schema.field(field).unwrap();
                let traced = chunks.iter().flatten().any(|r| values_agree(spec, r.cell(field), value, 0.0));
                prop_assert!(traced, "{} in {} has no source", field, m.record_id);
            }
        }
    }
}
