//! Rendering a template, listing its placeholders and validating a reply.

use morphoskill::llm::prompts::{placeholders, VOXEL_LEGEND};
use morphoskill::llm::{render_prompt, validate_cold_start, BackendResponse, Substitutions, TemplateId};

fn main() {
    let template = TemplateId::ColdStart;
    println!("{} placeholders: {:?}", template.schema_id(), placeholders(template.text()));
    let subs = Substitutions::new()
        .text("task_desc", "Walk as far right as possible on flat ground.")
        .text("voxel_legend", VOXEL_LEGEND)
        .text("n_designs", "2")
        .text("grid_size", "5");
    let request = render_prompt(template, &subs, 0).unwrap();
    println!("{}\n", request.rendered_text);

    let reply = r#"Here you go:
{"designs": [
  {"body": [[0,0,0,0,0],[0,0,0,0,0],[1,1,1,1,1],[1,3,3,3,1],[1,0,0,0,1]]},
  {"body": [[3,3,0,0,0],[0,0,0,0,0],[0,0,0,0,0],[0,0,0,0,0],[0,0,0,4,4]]}
]}"#;
    let response = BackendResponse::from_text(template, reply.to_string());
    println!("schema valid: {}", response.valid_schema);
    for (i, slot) in validate_cold_start(response.value(), 2, 5).into_iter().enumerate() {
        match slot {
            Some((body, repaired)) => println!("design {i}: accepted (repaired: {repaired})\n{}", body.render()),
            None => println!("design {i}: rejected, falls back to a random body"),
        }
    }
}
