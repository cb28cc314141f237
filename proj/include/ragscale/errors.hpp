#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ragscale {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class MalformedRecord : public Error {
public:
    MalformedRecord(std::size_t line, const std::string& what)
        : Error("malformed record at line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

class DuplicateId : public Error {
public:
    explicit DuplicateId(const std::string& id) : Error("duplicate id: " + id), id_(id) {}
    const std::string& id() const { return id_; }

private:
    std::string id_;
};

class UnknownTokenizer : public Error {
public:
    explicit UnknownTokenizer(const std::string& name) : Error("unknown tokenizer: " + name) {}
};

class EmptyCorpus : public Error {
public:
    EmptyCorpus() : Error("corpus is empty") {}
};

class EmptyRelevantSet : public Error {
public:
    EmptyRelevantSet() : Error("relevant set is empty") {}
};

class MalformedTranscript : public Error {
public:
    using Error::Error;
};

class BackendUnavailable : public Error {
public:
    using Error::Error;
};

class ConstraintViolation : public Error {
public:
    using Error::Error;
};

class UnparseableStep : public Error {
public:
    explicit UnparseableStep(const std::string& text) : Error("unparseable step: " + text) {}
};

class ScriptExhausted : public Error {
public:
    using Error::Error;
};

class InsufficientDemos : public Error {
public:
    using Error::Error;
};

class InvalidConfig : public Error {
public:
    using Error::Error;
};

class MissingBaseConfig : public Error {
public:
    using Error::Error;
};

class OutOfRange : public Error {
public:
    using Error::Error;
};

class DegenerateGroup : public Error {
public:
    using Error::Error;
};

class RankDeficientDesign : public Error {
public:
    using Error::Error;
};

class InsufficientPoints : public Error {
public:
    using Error::Error;
};

class NoFeasibleConfig : public Error {
public:
    NoFeasibleConfig() : Error("no configuration satisfies the budget constraint") {}
};

}  // namespace ragscale
