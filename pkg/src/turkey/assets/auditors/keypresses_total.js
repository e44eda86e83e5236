// Standalone keypress counter. Key identity is never captured.
(function () {
  var api = window.TurkeyAudit;
  if (!api) return;
  document.addEventListener(
    "keydown",
    function () {
      api.record("keypresses_total", {});
    },
    true
  );
})();
