use rand::Rng;
use serde_json::{Map, Number, Value};

pub const MPEA_SAMPLE_OUTPUT: &str = r#"{
    "high entropy alloy formula": 'NbMoTaWVCr',
    "microstructure":'BCC+Laves+Sec.',
    "processing method":'POWDER',
    "BCC\/FCC\/other":'other',
    "grain size": 0.54,
    "experimental density": 'No information',
    "hardness": 1072.0,
    "type of test":'C',
    "test temperature": 25.0,
    "yield strength": 'No information',
    "ultimate tensile strength": 'No information',
    "elongation": 'No information',
    "elongation plastic": 'No information',
    "experimental young modulus": 'No information',
    "oxygen content": 7946.0,
    "nitrogen content": 'No information',
    "carbon content": 'No information'
}"#;

pub const MPEA_SAMPLE_STRICT: &str = r#"{"high entropy alloy formula": "NbMoTaWVCr", "microstructure": "BCC+Laves+Sec.", "processing method": "POWDER", "BCC/FCC/other": "other", "grain size": 0.54, "experimental density": "No information", "hardness": 1072.0, "type of test": "C", "test temperature": 25.0, "yield strength": "No information", "ultimate tensile strength": "No information", "elongation": "No information", "elongation plastic": "No information", "experimental young modulus": "No information", "oxygen content": 7946.0, "nitrogen content": "No information", "carbon content": "No information"}"#;

pub const DIFFUSION_SAMPLE_OUTPUT: &str = "{
    \"melt\": \"NCMAS6\",
    \"diffusing species\": \"Fe\",
    \"type of experiment\": \"electrochemistry\",
    \"test temperature\": 1573.15,
    \"pressure\": \"No information\",
    \"diffusivity\": 1.35e-07,
    \"SiO2\": 80.6793201360426,
    \"TiO2\": \"No information\",
    \"Al2O3\": 0.0,
    \"FeOt\": \"No information\",
    \"MnO\": \"No information\",
    \"MgO\": 0.0,
    \"CaO\": 14.11921335907197,
    \"Na2O\": 5.201466504885413,
    \"K2O\": \"No information\",
    \"P2O5\": \"No information\",
    \"H2Ot\": \"No information\"
}        ";

pub const DIFFUSION_SAMPLE_STRICT: &str = r#"{"melt": "NCMAS6", "diffusing species": "Fe", "type of experiment": "electrochemistry", "test temperature": 1573.15, "pressure": "No information", "diffusivity": 1.35e-07, "SiO2": 80.6793201360426, "TiO2": "No information", "Al2O3": 0.0, "FeOt": "No information", "MnO": "No information", "MgO": 0.0, "CaO": 14.11921335907197, "Na2O": 5.201466504885413, "K2O": "No information", "P2O5": "No information", "H2Ot": "No information"}"#;

/// Hand-written lenient inputs with the strict JSON they must parse to, or
/// `None` where the input must be rejected.
pub fn cases() -> Vec<(String, Option<String>)> {
    let fixed: &[(&str, Option<&str>)] = &[
        (r#"{"a": 1}"#, Some(r#"{"a":1}"#)),
        (r#"{"a": 1,}"#, Some(r#"{"a":1}"#)),
        ("[1, 2, 3,]", Some("[1,2,3]")),
        ("[1, 2, 3,\n]", Some("[1,2,3]")),
        (r#"{"a": [1, {"b": 2,},],}"#, Some(r#"{"a":[1,{"b":2}]}"#)),
        ("// lead comment\n{\"a\": 1}", Some(r#"{"a":1}"#)),
        ("{\"a\": 1} // trailing", Some(r#"{"a":1}"#)),
        ("{\"a\": 1 // inline\n, \"b\": 2}", Some(r#"{"a":1,"b":2}"#)),
        ("/* block */ {\"a\": 1}", Some(r#"{"a":1}"#)),
        ("{\"a\": /* inside */ 1}", Some(r#"{"a":1}"#)),
        ("{\"a\": 1, /* multi\nline */ \"b\": 2}", Some(r#"{"a":1,"b":2}"#)),
        (r#"{"url": "http://example.org"}"#, Some(r#"{"url":"http://example.org"}"#)),
        (r#"{"c": "/* not a comment */"}"#, Some(r#"{"c":"/* not a comment */"}"#)),
        (r#"{"c": "a // b /* c */ d"}"#, Some(r#"{"c":"a // b /* c */ d"}"#)),
        ("['x', 'y']", Some(r#"["x","y"]"#)),
        ("{'k': 'v'}", Some(r#"{"k":"v"}"#)),
        (r"{'k': 'it\'s'}", Some(r#"{"k":"it's"}"#)),
        (r#"{'k': 'say "hi"'}"#, Some(r#"{"k":"say \"hi\""}"#)),
        (r#"{"k": 'mixed', 'n': 2}"#, Some(r#"{"k":"mixed","n":2}"#)),
        (r#"{"k": "esc \" quote // still string"}"#, Some(r#"{"k":"esc \" quote // still string"}"#)),
        (r#"{"k": "°C"}"#, Some(r#"{"k":"°C"}"#)),
        (r#"{"k": "μm"}"#, Some(r#"{"k":"μm"}"#)),
        ("[]", Some("[]")),
        ("{}", Some("{}")),
        ("[,]", None),
        ("[1,,2]", None),
        (r#"{"a" 1}"#, None),
        (r#"{"a": 1"#, None),
        ("/* unterminated", None),
        ("Here is the data", None),
        (r#"{"a": 1} extra"#, None),
        (r#"{"a": -0.5e-3}"#, Some(r#"{"a":-0.0005}"#)),
        (r#"{"a": 1.35e-07}"#, Some(r#"{"a":1.35e-7}"#)),
        (r#"{"a": 01}"#, None),
        (r#"{"a": .5}"#, None),
        (r#"{"a": true, "b": false, "c": null}"#, Some(r#"{"a":true,"b":false,"c":null}"#)),
        (r#"{"a": True}"#, None),
        (r#"{"a": NaN}"#, None),
        ("  \n\t{\"a\":1}\n  ", Some(r#"{"a":1}"#)),
        (r#"[{"a": 1}, {"a": 2},]"#, Some(r#"[{"a":1},{"a":2}]"#)),
        (r#"{"nested": {"deep": [[[]]]}}"#, Some(r#"{"nested":{"deep":[[[]]]}}"#)),
        ("// only comment\n// another\n[1]", Some("[1]")),
        ("[1 /* a */, /* b */ 2 // c\n]", Some("[1,2]")),
        (r#"{"a": "line\nbreak"}"#, Some(r#"{"a":"line\nbreak"}"#)),
        (r#"{"k": "tab\there"}"#, Some(r#"{"k":"tab\there"}"#)),
        (r"{'k': 'back\\slash'}", Some(r#"{"k":"back\\slash"}"#)),
        (r#"{"dup": 1, "dup": 2}"#, Some(r#"{"dup":2}"#)),
    ];
    let mut out: Vec<(String, Option<String>)> = fixed
        .iter()
        .map(|(i, e)| (i.to_string(), e.map(str::to_string)))
        .collect();
    out.push((MPEA_SAMPLE_OUTPUT.into(), Some(MPEA_SAMPLE_STRICT.into())));
    out.push((DIFFUSION_SAMPLE_OUTPUT.into(), Some(DIFFUSION_SAMPLE_STRICT.into())));
    out.push((
        format!("[\n{MPEA_SAMPLE_OUTPUT},\n// second record\n{MPEA_SAMPLE_OUTPUT},\n]"),
        Some(format!("[{MPEA_SAMPLE_STRICT},{MPEA_SAMPLE_STRICT}]")),
    ));
    out
}

const ALPHABET: &[char] = &[
    'a', 'b', 'Z', '0', '9', ' ', '/', '*', '"', '\\', '\'', ',', ':', '{', ']', '\n', '\t', '\u{1}', 'é', '°', 'μ', '²', '😀',
];

fn random_string(rng: &mut impl Rng) -> String {
    let n = rng.gen_range(0..12);
    (0..n).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())]).collect()
}

fn random_number(rng: &mut impl Rng) -> Value {
    match rng.gen_range(0..5) {
        0 => Value::from(rng.gen_range(-1000i64..1000)),
        1 => Value::from(rng.gen::<i64>()),
        2 => Value::from(rng.gen::<u64>()),
        3 => Value::from(rng.gen_range(-1e4..1e4f64)),
        _ => loop {
            let v = f64::from_bits(rng.gen());
            if let Some(n) = Number::from_f64(v) {
                break Value::Number(n);
            }
        },
    }
}

/// A random JSON value of bounded depth.
pub fn random_json(rng: &mut impl Rng, depth: u32) -> Value {
    let leaf = depth == 0 || rng.gen_bool(0.3);
    if leaf {
        return match rng.gen_range(0..5) {
            0 => Value::Null,
            1 => Value::Bool(rng.gen()),
            2 | 3 => random_number(rng),
            _ => Value::String(random_string(rng)),
        };
    }
    let n = rng.gen_range(0..5);
    if rng.gen_bool(0.5) {
        Value::Array((0..n).map(|_| random_json(rng, depth - 1)).collect())
    } else {
        let mut map = Map::new();
        for _ in 0..n {
            map.insert(random_string(rng), random_json(rng, depth - 1));
        }
        Value::Object(map)
    }
}
