//! Everything sent to the model is built here. The user only ever supplies
//! functional text; stack, layout and output-format instructions come from
//! the templates and the project's stack profile.

mod classify;
mod compose;
mod context;
mod kind;
mod template;

pub use classify::classify_prompt;
pub use compose::{
    compose_page_creation, compose_refinement, compose_system_preamble, compose_transition, ComposedPrompt, Message,
    Role,
};
pub use context::select_context_files;
pub use kind::{ParseKindError, PromptKind};
pub use template::{PromptTemplate, TemplateSet};
