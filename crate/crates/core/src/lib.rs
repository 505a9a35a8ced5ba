//! Natural-language driven OpenFOAM automation.
//!
//! - [`foam`]: dictionary parser, emitter and schemes linter.
//! - [`case`]: case directories, pre-checks and bundle application.
//! - [`llm`]: chat-completion gateway with HTTP and scripted backends.
//! - [`mcp`]: JSON-RPC envelopes, MCP server and client.
//! - [`tools`]: self-describing post-processing tools.
//! - [`events`]: status event log for observers.
//! - [`metrics`]: accuracy, trial aggregates and report rendering.
//! - [`exec`]: data-parallel helpers with a sequential fallback.
//! - [`process`]: child processes with timeouts.
//! - [`prompts`]: prompt templates for each agent role.
//! - [`client`]: tool selection, invocation and analysis scripts for post-processing.
//! - [`orchestrator`]: the generate, run and correct loop and repeated trials.
//! - [`http_api`]: HTTP routes for MCP, status events, prompts and case files.

pub mod case;
pub mod client;
pub mod events;
pub mod exec;
pub mod foam;
pub mod http_api;
pub mod llm;
pub mod mcp;
pub mod orchestrator;
pub mod metrics;
pub mod process;
pub mod prompts;
pub mod tools;
