#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

namespace opencourier {

enum class ErrorCode {
    ParseError,
    ValidationError,
    SourceUnavailable,
    DuplicateDomain,
    ReadOnlyRegistry,
    InvalidGeometry,
    IllegalTransition,
    ForbiddenActor,
    NotFound,
    Unauthenticated,
    Unauthorized,
    IssueWindowClosed,
    UnknownInstance,
    ThreadClosed,
    Expired,
    OutOfTurn,
    RoundLimit,
    NoMatchingInstance,
    NotAccepted,
    AlreadyFinalized,
    NoCandidate,
    IllegalState,
    EmptyRange,
    VersionConflict,
    CorruptRecord,
    ScenarioInvalid,
    MethodNotAllowed,
};

constexpr std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::ParseError: return "PARSE_ERROR";
        case ErrorCode::ValidationError: return "VALIDATION_ERROR";
        case ErrorCode::SourceUnavailable: return "SOURCE_UNAVAILABLE";
        case ErrorCode::DuplicateDomain: return "DUPLICATE_DOMAIN";
        case ErrorCode::ReadOnlyRegistry: return "READ_ONLY_REGISTRY";
        case ErrorCode::InvalidGeometry: return "INVALID_GEOMETRY";
        case ErrorCode::IllegalTransition: return "ILLEGAL_TRANSITION";
        case ErrorCode::ForbiddenActor: return "FORBIDDEN_ACTOR";
        case ErrorCode::NotFound: return "NOT_FOUND";
        case ErrorCode::Unauthenticated: return "UNAUTHENTICATED";
        case ErrorCode::Unauthorized: return "UNAUTHORIZED";
        case ErrorCode::IssueWindowClosed: return "ISSUE_WINDOW_CLOSED";
        case ErrorCode::UnknownInstance: return "UNKNOWN_INSTANCE";
        case ErrorCode::ThreadClosed: return "THREAD_CLOSED";
        case ErrorCode::Expired: return "EXPIRED";
        case ErrorCode::OutOfTurn: return "OUT_OF_TURN";
        case ErrorCode::RoundLimit: return "ROUND_LIMIT";
        case ErrorCode::NoMatchingInstance: return "NO_MATCHING_INSTANCE";
        case ErrorCode::NotAccepted: return "NOT_ACCEPTED";
        case ErrorCode::AlreadyFinalized: return "ALREADY_FINALIZED";
        case ErrorCode::NoCandidate: return "NO_CANDIDATE";
        case ErrorCode::IllegalState: return "ILLEGAL_STATE";
        case ErrorCode::EmptyRange: return "EMPTY_RANGE";
        case ErrorCode::VersionConflict: return "VERSION_CONFLICT";
        case ErrorCode::CorruptRecord: return "CORRUPT_RECORD";
        case ErrorCode::ScenarioInvalid: return "SCENARIO_INVALID";
        case ErrorCode::MethodNotAllowed: return "METHOD_NOT_ALLOWED";
    }
    return "INTERNAL";
}

/// HTTP status used by the gateway for each domain error.
constexpr int http_status(ErrorCode code) {
    switch (code) {
        case ErrorCode::ParseError:
        case ErrorCode::ValidationError:
        case ErrorCode::InvalidGeometry:
        case ErrorCode::EmptyRange:
        case ErrorCode::ScenarioInvalid:
            return 400;
        case ErrorCode::Unauthenticated:
            return 401;
        case ErrorCode::Unauthorized:
        case ErrorCode::ForbiddenActor:
            return 403;
        case ErrorCode::NotFound:
        case ErrorCode::UnknownInstance:
        case ErrorCode::NoMatchingInstance:
            return 404;
        case ErrorCode::MethodNotAllowed:
            return 405;
        case ErrorCode::IllegalTransition:
        case ErrorCode::ThreadClosed:
        case ErrorCode::Expired:
        case ErrorCode::OutOfTurn:
        case ErrorCode::NotAccepted:
        case ErrorCode::AlreadyFinalized:
        case ErrorCode::IssueWindowClosed:
        case ErrorCode::DuplicateDomain:
        case ErrorCode::ReadOnlyRegistry:
        case ErrorCode::VersionConflict:
        case ErrorCode::IllegalState:
        case ErrorCode::NoCandidate:
            return 409;
        case ErrorCode::RoundLimit:
            return 422;
        case ErrorCode::SourceUnavailable:
            return 503;
        case ErrorCode::CorruptRecord:
            return 500;
    }
    return 500;
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, std::string message, nlohmann::json details = nlohmann::json::object())
        : std::runtime_error(std::string(to_string(code)) + ": " + message),
          code_(code),
          message_(std::move(message)),
          details_(std::move(details)) {}

    ErrorCode code() const noexcept { return code_; }
    const std::string& message() const noexcept { return message_; }
    const nlohmann::json& details() const noexcept { return details_; }

    nlohmann::json envelope() const {
        return {{"error", {{"code", std::string(to_string(code_))}, {"message", message_}, {"details", details_}}}};
    }

private:
    ErrorCode code_;
    std::string message_;
    nlohmann::json details_;
};

}  // namespace opencourier
