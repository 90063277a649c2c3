//! Prompt assembly for whole-document and chunked extraction.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::corpus::{chunk_text, linearize, ChunkConfig, DocumentModel};
use crate::postprocess::ExtractedRecord;
use crate::schema::{render_schema, CellValue, ExtractionSchema};

const ROLE: &str = include_str!("../assets/templates/role.txt");
const MPEA_INSTRUCTION: &str = include_str!("../assets/templates/mpea_instruction.txt");
const DIFFUSION_INSTRUCTION: &str = include_str!("../assets/templates/diffusion_instruction.txt");
const GENERIC_INSTRUCTION: &str = include_str!("../assets/templates/generic_instruction.txt");
const CHUNKED_INSTRUCTION: &str = include_str!("../assets/templates/chunked_instruction.txt");

/// Placeholders recognised in instruction templates.
pub const SLOTS: [&str; 3] = ["text", "schema", "missing"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    ZeroShot,
    OneShot,
    Chunked,
}

impl PromptMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptMode::ZeroShot => "zero_shot",
            PromptMode::OneShot => "one_shot",
            PromptMode::Chunked => "chunked",
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("one-shot prompting needs an exemplar")]
    MissingExemplar,
    #[error("an exemplar was given for {0} prompting")]
    UnexpectedExemplar(&'static str),
    #[error("chunked prompts are built with build_chunked_prompts")]
    ChunkedMode,
    #[error("exemplar record `{record}` has field `{field}` which is not in the schema")]
    UnknownField { record: String, field: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Exemplar {
    pub input_text: String,
    pub expected_output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptBundle {
    pub role_text: String,
    /// Instruction template with the schema and this bundle's target filled in.
    pub instruction_text: String,
    pub schema_text: String,
    pub exemplar: Option<Exemplar>,
    pub target_text: String,
    pub mode: PromptMode,
    pub doc_id: String,
    pub chunk_index: Option<usize>,
    /// The complete text sent to the model.
    pub prompt_text: String,
}

/// Role paragraph plus the two instruction templates for one schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub role: String,
    pub instruction: String,
    pub chunked_instruction: String,
}

fn template(text: &str) -> String {
    text.strip_suffix('\n').unwrap_or(text).to_string()
}

impl PromptTemplates {
    /// Bundled templates: the dataset-specific instruction for the two
    /// bundled schemas, a generic one otherwise.
    pub fn for_schema(schema: &ExtractionSchema) -> Self {
        let instruction = match schema.name.as_str() {
            "mpea" => MPEA_INSTRUCTION,
            "diffusion" => DIFFUSION_INSTRUCTION,
            _ => GENERIC_INSTRUCTION,
        };
        Self {
            role: template(ROLE),
            instruction: template(instruction),
            chunked_instruction: template(CHUNKED_INSTRUCTION),
        }
    }

    pub fn with_instruction(mut self, instruction: &str) -> Self {
        self.instruction = template(instruction);
        self
    }

    pub fn with_chunked_instruction(mut self, instruction: &str) -> Self {
        self.chunked_instruction = template(instruction);
        self
    }
}

/// Replaces `{slot}` placeholders in one pass; substituted text is never
/// rescanned, so braces inside a schema or document survive untouched.
pub fn fill_template(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let name = &after[..close];
            values
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn instruction(template: &str, text: &str, schema_text: &str, missing: &str) -> String {
    fill_template(
        template,
        &[("text", text), ("schema", schema_text), ("missing", missing)],
    )
}

pub fn build_prompt(
    schema: &ExtractionSchema,
    doc: &DocumentModel,
    mode: PromptMode,
    exemplar: Option<&Exemplar>,
) -> Result<PromptBundle, PromptError> {
    build_prompt_with(&PromptTemplates::for_schema(schema), schema, doc, mode, exemplar)
}

/// Whole-document prompt. One-shot layout: role, the instruction applied to
/// the exemplar input, the expected output, then the instruction applied to
/// the target document.
pub fn build_prompt_with(
    templates: &PromptTemplates,
    schema: &ExtractionSchema,
    doc: &DocumentModel,
    mode: PromptMode,
    exemplar: Option<&Exemplar>,
) -> Result<PromptBundle, PromptError> {
    match (mode, exemplar) {
        (PromptMode::Chunked, _) => return Err(PromptError::ChunkedMode),
        (PromptMode::OneShot, None) => return Err(PromptError::MissingExemplar),
        (PromptMode::ZeroShot, Some(_)) => return Err(PromptError::UnexpectedExemplar("zero-shot")),
        _ => {}
    }
    let schema_text = render_schema(schema);
    let target_text = linearize(doc);
    let missing = schema.missing_token.as_str();
    let instruction_text = instruction(&templates.instruction, &target_text, &schema_text, missing);

    let mut prompt_text = templates.role.clone();
    if let Some(ex) = exemplar {
        prompt_text.push_str("\n\n");
        prompt_text.push_str(&instruction(
            &templates.instruction,
            &ex.input_text,
            &schema_text,
            missing,
        ));
        prompt_text.push_str("\n\n");
        prompt_text.push_str(&ex.expected_output);
    }
    prompt_text.push_str("\n\n");
    prompt_text.push_str(&instruction_text);

    Ok(PromptBundle {
        role_text: templates.role.clone(),
        instruction_text,
        schema_text,
        exemplar: exemplar.cloned(),
        target_text,
        mode,
        doc_id: doc.doc_id.clone(),
        chunk_index: None,
        prompt_text,
    })
}

/// One `- name (unit): description` line per field.
pub fn render_entities(schema: &ExtractionSchema) -> String {
    let mut out = String::new();
    for (i, f) in schema.fields.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = write!(out, "- {}", f.name);
        if let Some(u) = &f.unit {
            let _ = write!(out, " ({u})");
        }
        let description = if f.description.is_empty() {
            &f.name
        } else {
            &f.description
        };
        let _ = write!(out, ": {description}");
    }
    out
}

pub fn build_chunked_prompts(
    schema: &ExtractionSchema,
    doc: &DocumentModel,
    config: &ChunkConfig,
) -> Vec<PromptBundle> {
    build_chunked_prompts_with(&PromptTemplates::for_schema(schema), schema, doc, config)
}

pub fn build_chunked_prompts_with(
    templates: &PromptTemplates,
    schema: &ExtractionSchema,
    doc: &DocumentModel,
    config: &ChunkConfig,
) -> Vec<PromptBundle> {
    let schema_text = render_entities(schema);
    chunk_text(&doc.doc_id, &linearize(doc), config)
        .into_iter()
        .map(|chunk| {
            let instruction_text = instruction(
                &templates.chunked_instruction,
                &chunk.text,
                &schema_text,
                &schema.missing_token,
            );
            PromptBundle {
                prompt_text: format!("{}\n\n{}", templates.role, instruction_text),
                role_text: templates.role.clone(),
                instruction_text,
                schema_text: schema_text.clone(),
                exemplar: None,
                target_text: chunk.text,
                mode: PromptMode::Chunked,
                doc_id: doc.doc_id.clone(),
                chunk_index: Some(chunk.index),
            }
        })
        .collect()
}

/// Exemplar input (the linearized paper) and expected output (a JSON list
/// with one object per record, every schema field present, missing cells
/// spelled as the missing token).
pub fn render_exemplar(
    schema: &ExtractionSchema,
    exemplar_doc: &DocumentModel,
    exemplar_records: &[ExtractedRecord],
) -> Result<Exemplar, PromptError> {
    let mut objects = Vec::with_capacity(exemplar_records.len());
    for record in exemplar_records {
        if let Some(field) = record.cells.keys().find(|k| schema.field(k).is_none()) {
            return Err(PromptError::UnknownField {
                record: record.record_id.clone(),
                field: field.clone(),
            });
        }
        let object: serde_json::Map<String, Value> = schema
            .fields
            .iter()
            .map(|f| {
                let value = match record.cells.get(&f.name).unwrap_or(&CellValue::Missing) {
                    CellValue::Missing => Value::String(schema.missing_token.clone()),
                    cell => cell.to_json(f),
                };
                (f.name.clone(), value)
            })
            .collect();
        objects.push(Value::Object(object));
    }
    Ok(Exemplar {
        input_text: linearize(exemplar_doc),
        expected_output: to_python_json(&Value::Array(objects)),
    })
}

/// JSON text laid out like Python's `json.dumps(value, indent=4,
/// ensure_ascii=False)`, floats included.
pub fn to_python_json(value: &Value) -> String {
    let mut out = String::new();
    write_python(&mut out, value, 0);
    out
}

fn write_python(out: &mut String, value: &Value, depth: usize) {
    let pad = |out: &mut String, d: usize| {
        out.push('\n');
        out.extend(std::iter::repeat_n(' ', 4 * d));
    };
    match value {
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                pad(out, depth + 1);
                write_python(out, item, depth + 1);
            }
            pad(out, depth);
            out.push(']');
        }
        Value::Object(map) => {
            out.push('{');
            for (i, (k, v)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                pad(out, depth + 1);
                out.push_str(&Value::String(k.clone()).to_string());
                out.push_str(": ");
                write_python(out, v, depth + 1);
            }
            pad(out, depth);
            out.push('}');
        }
        Value::Number(n) if n.is_f64() => out.push_str(&python_float_repr(n.as_f64().unwrap())),
        other => out.push_str(&other.to_string()),
    }
}

/// Python's `repr(float)`: shortest round-trip digits, positional notation
/// for decimal exponents in [-4, 16), scientific with a two-digit exponent
/// otherwise, and always a fractional part in positional form.
pub fn python_float_repr(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "Infinity" } else { "-Infinity" }.into();
    }
    let sci = format!("{:e}", v.abs());
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let sign = if v.is_sign_negative() { "-" } else { "" };

    if !(-4..16).contains(&exp) {
        let (head, tail) = digits.split_at(1);
        let frac = if tail.is_empty() {
            String::new()
        } else {
            format!(".{tail}")
        };
        let esign = if exp < 0 { '-' } else { '+' };
        return format!("{sign}{head}{frac}e{esign}{:02}", exp.abs());
    }
    let body = if exp < 0 {
        format!("0.{}{}", "0".repeat((-exp - 1) as usize), digits)
    } else {
        let point = exp as usize + 1;
        if digits.len() <= point {
            format!("{}{}.0", digits, "0".repeat(point - digits.len()))
        } else {
            format!("{}.{}", &digits[..point], &digits[point..])
        }
    };
    format!("{sign}{body}")
}
