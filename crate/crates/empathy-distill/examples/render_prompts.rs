//! Render every prompting mode for one dialogue and print the results.
//!
//! ```bash
//! cargo run --example render_prompts
//! ```

use empathy_distill::corpus::DialogueContext;
use empathy_distill::prompt::{PromptStrategy, TemplateSet};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let templates = TemplateSet::builtin();
    let context = DialogueContext {
        id: "taco-1".to_string(),
        situation: "I was just walking out of Taco bell. The bottom fell out of my bag and my wonderful taco bell covered the ground.".to_string(),
        speaker_utterance: "I can't believe the bottom of the bag ripped and my wonderful taco's covered the ground. I'm sure my face was bright red with anger.".to_string(),
    };
    let human_response = "NOT THE TACOS!!!! Seriously, I can understand how frustrating that is. Especially when you have the taste for something.....then gone!";

    for strategy in PromptStrategy::ALL {
        let initial = strategy.is_improvement().then_some(human_response);
        let prompts = templates.render(strategy, &context, initial)?;
        println!("==== {strategy} ({} call{})", prompts.len(), if prompts.len() == 1 { "" } else { "s" });
        for prompt in &prompts {
            if prompts.len() > 1 {
                println!("-- stage {}", prompt.stage_index);
            }
            println!("{}\n", prompt.user_message);
        }
    }

    let judge = templates.render_judge(
        &context,
        "I'm really sorry to hear about your tacos. I can understand why you'd be upset.",
        human_response,
    )?;
    println!("==== judge\n{}", judge.user_message);
    Ok(())
}
