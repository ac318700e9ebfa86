//! Adversarial seeded provider: emits valid answers, malformed text, schema
//! violations, calls to tools and agents that do not exist, and bad arguments.

use rand::Rng;

use super::gen::{random_record, random_value, seeded_rng};
use super::provider::{Provider, ProviderError, ProviderRequest, ProviderResponse, ToolCall};
use crate::value::FieldType;

const INVENTED: &[&str] =
    &["ghost", "web_search_v2", "planner_agent", "delegate_to_critic", "sql_admin", "shell", "transfer_funds"];

#[derive(Debug, Clone)]
pub struct FuzzProvider {
    seed: u64,
}

impl FuzzProvider {
    pub fn new(seed: u64) -> Self {
        FuzzProvider { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn call<R: Rng>(&self, req: &ProviderRequest, rng: &mut R) -> ToolCall {
        let known = !req.tool_defs.is_empty() && rng.gen_bool(0.5);
        if !known {
            let name = INVENTED[rng.gen_range(0..INVENTED.len())];
            let args = random_value(&FieldType::Record(req.required_output_schema.clone()), rng).to_json();
            return ToolCall { name: name.to_string(), args };
        }
        let def = &req.tool_defs[rng.gen_range(0..req.tool_defs.len())];
        let args = if rng.gen_bool(0.7) {
            random_record(&def.input_schema, rng).to_json()
        } else {
            serde_json::json!({ "unexpected": rng.gen::<u16>() })
        };
        ToolCall { name: def.name.clone(), args }
    }
}

impl Provider for FuzzProvider {
    fn name(&self) -> &str {
        "fuzz"
    }

    fn complete(&self, req: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let mut rng = seeded_rng(&[
            b"fuzz",
            &self.seed.to_le_bytes(),
            req.node_id.as_bytes(),
            &req.attempt.to_le_bytes(),
            &req.iteration.to_le_bytes(),
        ]);
        let out = FieldType::Record(req.required_output_schema.clone());
        let resp = match rng.gen_range(0..8) {
            0 | 1 => ProviderResponse::final_text(random_value(&out, &mut rng).canonical_string()),
            2 => {
                let text = random_value(&out, &mut rng).canonical_string();
                let cut = rng.gen_range(0..=text.len());
                ProviderResponse::final_text(text.get(..cut).unwrap_or("{").to_string())
            }
            3 => {
                let mut json = random_value(&out, &mut rng).to_json();
                if let Some(obj) = json.as_object_mut() {
                    obj.insert("hallucinated_field".into(), serde_json::json!(true));
                }
                ProviderResponse::final_text(json.to_string())
            }
            4 => ProviderResponse::final_text("I will now call the planner agent to finish this task."),
            5 => ProviderResponse::tool_calls(vec![]),
            _ => {
                let n = rng.gen_range(1..4);
                ProviderResponse::tool_calls((0..n).map(|_| self.call(req, &mut rng)).collect())
            }
        };
        Ok(resp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Sampling;
    use crate::nodes::provider::ResponseBody;
    use crate::value::Schema;

    fn req(i: u32) -> ProviderRequest {
        ProviderRequest {
            node_id: "n".into(),
            iteration: i,
            attempt: 0,
            messages: vec![],
            tool_defs: vec![],
            required_output_schema: Schema::of([("x", FieldType::Int)]),
            sampling: Sampling::default(),
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let seq = |seed| (1..50).map(|i| FuzzProvider::new(seed).complete(&req(i)).unwrap()).collect::<Vec<_>>();
        assert_eq!(seq(7), seq(7));
        assert_ne!(seq(7), seq(8));
    }

    #[test]
    fn exercises_unknown_tools() {
        let p = FuzzProvider::new(1);
        let unknown = (1..200)
            .filter_map(|i| match p.complete(&req(i)).unwrap().body {
                ResponseBody::ToolCalls(c) => Some(c.len()),
                _ => None,
            })
            .sum::<usize>();
        assert!(unknown > 0);
    }
}
