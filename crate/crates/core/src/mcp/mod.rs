//! Model Context Protocol over JSON-RPC 2.0: envelope codec, a server
//! session that exposes the tool registry, and a client with in-process,
//! stream and HTTP transports.

mod client;
mod message;
mod server;

pub use client::{HttpTransport, InProcess, McpClient, McpError, StreamTransport, Transport};
pub use message::*;
pub use server::{serve_stream, McpSession, ToolHost, SERVER_NAME, SUPPORTED_VERSIONS};
