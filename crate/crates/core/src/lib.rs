//! Plan-then-write text-to-SQL: planner and SQL agents over a pluggable LLM
//! gateway, sandboxed SQLite execution, result voting, VA/EX scoring and a
//! guideline refinement loop.

pub mod dataset;
pub mod evaluation;
pub mod executor;
pub mod fixture;
pub mod gateway;
pub mod metaprompt;
pub mod pipeline;
pub mod planner;
pub mod prompts;
pub mod retrieval;
pub mod sql_agent;
pub mod template;
pub mod voting;
