//! The external evaluator wire protocol.
//!
//! `cargo run --example external_evaluator -- --serve` speaks the protocol on
//! stdio and can back a run with `--evaluator "external:exec:<binary> --serve"`.
//! Without arguments, the example serves itself on a loopback socket and
//! evaluates a few bodies through it.

use std::io::{BufReader, Write};
use std::net::TcpListener;
use std::time::Duration;

use morphoskill::eval::{
    env_id, serve_protocol, surrogate_fitness, EvalRequest, Endpoint, Evaluator, ExternalEvaluator, Handshake,
    TaskProfile, WireRequest,
};
use morphoskill::voxel::random_valid_body;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn handshake() -> Handshake {
    Handshake::new(vec!["Walker-v0".into(), "Carrier-v0".into(), "Pusher-v0".into()], false)
}

fn handle(req: &WireRequest) -> Result<f64, String> {
    if !handshake().tasks.contains(&req.task) {
        return Err(format!("task {} is not served here", req.task));
    }
    let family = req.task.split('-').next().unwrap_or("");
    surrogate_fitness(&req.body, TaskProfile::for_task(family)).map_err(|e| e.to_string())
}

fn main() {
    if std::env::args().any(|a| a == "--serve") {
        let stdin = std::io::stdin();
        serve_protocol(stdin.lock(), std::io::stdout().lock(), &handshake(), handle).unwrap();
        return;
    }
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut writer = stream.try_clone().unwrap();
        serve_protocol(BufReader::new(stream), &mut writer, &handshake(), handle).unwrap();
        writer.flush().unwrap();
    });

    let ev = ExternalEvaluator::connect(&Endpoint::Tcp(addr.clone()), Duration::from_secs(5)).unwrap();
    println!("connected to {addr}: {}", serde_json::to_string(ev.handshake()).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (i, task) in ["Walker", "Pusher", "Climber"].iter().enumerate() {
        let req = EvalRequest {
            request_id: format!("q{i}"),
            body: random_valid_body(5, &mut rng),
            task: env_id(task, 5),
            scale: 5,
            controller_seed: i as u64,
            budget_steps: 1000,
        };
        println!("-> {}", serde_json::to_string(&WireRequest::from(&req)).unwrap());
        println!("<- {}", serde_json::to_string(&ev.evaluate(&req)).unwrap());
    }
}
