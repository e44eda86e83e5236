// Standalone click recorder. The bundled runner captures clicks natively;
// this file backs embedding the auditor outside the runner.
(function () {
  var api = window.TurkeyAudit;
  if (!api) return;
  document.addEventListener(
    "click",
    function (ev) {
      api.record("clicks_total", {
        x_px: Math.max(0, Math.round(ev.clientX)),
        y_px: Math.max(0, Math.round(ev.clientY)),
        target: api.selectorPath(ev.target),
      });
    },
    true
  );
})();
