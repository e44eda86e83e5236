// Standalone tab focus recorder; visibilitychange first, blur/focus fallback.
(function () {
  var api = window.TurkeyAudit;
  if (!api) return;
  function state() {
    return document.visibilityState === "hidden" ? "blur" : "focus";
  }
  document.addEventListener("visibilitychange", function () {
    api.record("focus_changes", { state: state() });
  });
  window.addEventListener("blur", function () {
    api.record("focus_changes", { state: "blur" });
  });
  window.addEventListener("focus", function () {
    api.record("focus_changes", { state: "focus" });
  });
})();
