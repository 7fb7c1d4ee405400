//! Batch evaluation with the built-in surrogate evaluator.

use morphoskill::eval::{env_id, evaluate_batch, EvalRequest, MotifFeatures, SurrogateEvaluator, DEFAULT_BUDGET_STEPS};
use morphoskill::voxel::random_valid_body;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let requests: Vec<EvalRequest> = (0..6)
        .map(|i| EvalRequest {
            request_id: format!("r{i}"),
            body: random_valid_body(5, &mut rng),
            task: env_id("Carrier", 5),
            scale: 5,
            controller_seed: i,
            budget_steps: DEFAULT_BUDGET_STEPS,
        })
        .collect();
    let results = evaluate_batch(&requests, &SurrogateEvaluator::default(), 4).unwrap();
    for (req, res) in requests.iter().zip(&results) {
        println!("{} {} fitness {:.3}", res.request_id, req.task, res.fitness.unwrap());
        println!("   {:?}", MotifFeatures::of(&req.body));
    }
}
