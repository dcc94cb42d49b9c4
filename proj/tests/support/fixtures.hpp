#pragma once

// Shared builders for tests: a Table-style quote between the corners of the
// Princeton rectangle, an instance record, and a registry around it.

#include <string>

#include <json.hpp>

#include "opencourier/quoting.hpp"
#include "opencourier/registry.hpp"

namespace fixtures {

inline const opencourier::Timestamp t0 = opencourier::parse_iso8601("2025-03-03T12:00:00Z");

inline const opencourier::geo::Polygon princeton =
    opencourier::geo::rectangle(-74.6675, 40.3435, -74.6565, 40.3520);

inline nlohmann::json quote_json() {
    return nlohmann::json::parse(R"({
        "quote": 12.00, "quoteRangeFrom": 10.00, "quoteRangeTo": 16.00, "feePercentage": 10,
        "currency": "USD", "duration": 25, "distance": 1.2, "distanceUnit": "MILES",
        "pickupPhoneNumber": "+1 609 555 0100", "pickupName": "Nassau Noodles",
        "dropoffPhoneNumber": "+1 609 555 0199", "dropoffName": "Jordan Reyes",
        "expiresAt": "2025-03-03T12:30:00Z",
        "pickupReadyAt": "2025-03-03T12:10:00Z", "pickupDeadlineAt": "2025-03-03T12:40:00Z",
        "dropoffReadyAt": "2025-03-03T12:20:00Z", "dropoffEta": "2025-03-03T12:45:00Z",
        "dropoffDeadlineAt": "2025-03-03T13:15:00Z",
        "orderTotalValue": 38.50,
        "pickupLocation": {"lon": -74.6675, "lat": 40.3520, "address": "1 Nassau St"},
        "dropoffLocation": {"lon": -74.6565, "lat": 40.3435, "address": "20 Alexander St"}})");
}

inline opencourier::quoting::DeliveryQuote quote() { return opencourier::quoting::quote_from_json(quote_json()); }

inline opencourier::registry::InstanceRecord instance(const std::string& domain, const std::string& name,
                                                      opencourier::geo::Polygon area = princeton) {
    opencourier::registry::InstanceRecord r;
    r.instanceName = name;
    r.admin = "Admin of " + name;
    r.contact = "ops@" + domain;
    r.domainName = domain;
    r.termsOfServiceUrl = "https://" + domain + "/terms";
    r.privacyPolicyUrl = "https://" + domain + "/privacy";
    r.location.polygons.push_back(area);
    r.languages = {"en"};
    r.description = name + " courier cooperative";
    return r;
}

}  // namespace fixtures
