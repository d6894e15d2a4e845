pub mod pddl;
pub mod planner;
pub mod validator;
pub mod llm;
pub mod pipeline;
