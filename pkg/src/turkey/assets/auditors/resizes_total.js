// Standalone window resize recorder.
(function () {
  var api = window.TurkeyAudit;
  if (!api) return;
  window.addEventListener("resize", function () {
    api.record("resizes_total", {
      width_px: Math.max(1, window.innerWidth),
      height_px: Math.max(1, window.innerHeight),
    });
  });
})();
