// Standalone mouse sampler (throttled by the capture runtime).
(function () {
  var api = window.TurkeyAudit;
  if (!api) return;
  document.addEventListener(
    "mousemove",
    function (ev) {
      api.recordThrottled("mouse_movement", {
        x_px: Math.max(0, Math.round(ev.clientX)),
        y_px: Math.max(0, Math.round(ev.clientY)),
      });
    },
    true
  );
})();
