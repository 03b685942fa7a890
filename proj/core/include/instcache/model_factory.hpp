#pragma once

#include <memory>
#include <string>

#include "instcache/token_model.hpp"

namespace instcache {

// Builds a model from a compact spec string:
//   uniform:v=3[,max_len=64]
//   powerlaw:v=1000,alpha=1.5[,eos_rank=1][,max_len=64]
//   ngram:path=model.ngram.ndjson
//   external:tcp=host:port[,batch=256][,max_len=64]
//   external:cmd=<program and args>      (everything after cmd= is the command)
std::unique_ptr<TokenModel> model_from_spec(const std::string& spec_string);

} // namespace instcache
