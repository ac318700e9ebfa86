//! Seeded generation of schema-conforming values.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::value::{FieldType, Schema, Value};

/// A generator seeded from arbitrary labelled parts, so the same labels always
/// give the same stream.
pub fn seeded_rng(parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

const WORDS: &[&str] = &["alpha", "beta", "gamma", "delta", "plan", "step", "result", "node", "ünï", "x y"];

pub fn random_value<R: Rng>(ty: &FieldType, rng: &mut R) -> Value {
    match ty {
        FieldType::Bool => Value::Bool(rng.gen()),
        FieldType::Int => Value::Int(rng.gen_range(-1000..=1000)),
        FieldType::Float => Value::Float(f64::from(rng.gen_range(-100_000..=100_000)) / 64.0),
        FieldType::String => {
            let n = rng.gen_range(0..3);
            let words: Vec<&str> = (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect();
            Value::String(words.join(" "))
        }
        FieldType::Bytes => {
            let n = rng.gen_range(0..6);
            Value::Bytes((0..n).map(|_| rng.gen()).collect())
        }
        FieldType::List(inner) => {
            let n = rng.gen_range(0..4);
            Value::List((0..n).map(|_| random_value(inner, rng)).collect())
        }
        FieldType::Record(schema) => random_record(schema, rng),
    }
}

pub fn random_record<R: Rng>(schema: &Schema, rng: &mut R) -> Value {
    Value::Record(schema.iter().map(|(k, t)| (k.clone(), random_value(t, rng))).collect())
}

/// A random field type; `depth` bounds nesting.
pub fn random_type<R: Rng>(rng: &mut R, depth: u32) -> FieldType {
    let top = if depth == 0 { 5 } else { 7 };
    match rng.gen_range(0..top) {
        0 => FieldType::Bool,
        1 => FieldType::Int,
        2 => FieldType::Float,
        3 => FieldType::String,
        4 => FieldType::Bytes,
        5 => FieldType::list(random_type(rng, depth - 1)),
        _ => FieldType::Record(random_schema(rng, depth - 1)),
    }
}

pub fn random_schema<R: Rng>(rng: &mut R, depth: u32) -> Schema {
    let n = rng.gen_range(1..4);
    let mut s = Schema::empty();
    for i in 0..n {
        s.insert(format!("f{i}"), random_type(rng, depth)).expect("distinct names");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_values_conform() {
        let mut rng = seeded_rng(&[b"t"]);
        for _ in 0..200 {
            let s = random_schema(&mut rng, 2);
            let v = random_record(&s, &mut rng);
            s.check(&v).unwrap();
        }
    }

    #[test]
    fn same_labels_same_stream() {
        let a: Vec<u32> = (0..4).map(|_| seeded_rng(&[b"a", b"b"]).gen()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        let x: u64 = seeded_rng(&[b"ab"]).gen();
        let y: u64 = seeded_rng(&[b"a", b"b"]).gen();
        assert_ne!(x, y);
    }
}
